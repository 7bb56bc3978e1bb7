#include <doctest.h>

#include <cmath>

#include "fedl2t/error.hpp"
#include "fedl2t/losses.hpp"
#include "fedl2t/nn.hpp"
#include "oracles.hpp"

using namespace fedl2t;

namespace {

ModelSpec small_spec() {
    ModelSpec s;
    s.input_dim = 4;
    s.base_hidden = {6, 5};
    s.feature_dim = 5;
    return s;
}

Matrix random_x(std::size_t n, std::size_t d, RngStream& rng) {
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    return x;
}

}  // namespace

TEST_CASE("parameter count matches layout enumeration") {
    ModelSpec s;
    s.input_dim = 4;
    s.base_hidden = {8};
    s.feature_dim = 8;
    CHECK(s.param_count() == 58);
    CHECK(Layout(s).total == 58);

    const auto big = ModelSpec{};
    std::size_t expect = 0, in = big.input_dim;
    for (auto w : big.base_hidden) {
        expect += in * w + w;
        in = w;
    }
    expect += in * 2 + 2;
    CHECK(big.param_count() == expect);
}

TEST_CASE("spec validation") {
    ModelSpec s;
    s.feature_dim = 64;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = ModelSpec{};
    s.num_classes = 3;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = ModelSpec{};
    s.base_hidden = {};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = ModelSpec{};
    s.input_dim = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("init is deterministic, fan-in bounded, zero bias") {
    const auto spec = small_spec();
    RngStream a(7, "init"), b(7, "init");
    const auto m1 = init_model(spec, a);
    const auto m2 = init_model(spec, b);
    CHECK(m1 == m2);
    for (const auto& l : m1.layout().layers) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
        for (std::size_t i = 0; i < l.in * l.out; ++i) CHECK(std::abs(m1[l.weight_offset + i]) <= bound);
        for (std::size_t i = 0; i < l.out; ++i) CHECK(m1[l.bias_offset + i] == 0.0);
    }
}

TEST_CASE("zero model predicts one half") {
    const ModelParams zero(small_spec());
    RngStream rng(1, "x");
    const auto t = forward(zero, random_x(3, 4, rng));
    for (Eigen::Index r = 0; r < 3; ++r) {
        CHECK(t.probs(r, 0) == 0.5);
        CHECK(t.probs(r, 1) == 0.5);
    }
}

TEST_CASE("softmax closed forms") {
    Matrix z(2, 2);
    z << 0.0, 0.0, std::log(3.0), 0.0;
    const auto p = softmax(z);
    CHECK(p(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p(1, 0) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(p(1, 1) == doctest::Approx(0.25).epsilon(1e-15));
    Matrix big(1, 2);
    big << 1000.0, -1000.0;
    const auto q = softmax(big);
    CHECK(std::isfinite(q(0, 1)));
    CHECK(q(0, 0) == 1.0);
}

TEST_CASE("forward matches loop oracle") {
    const auto spec = small_spec();
    RngStream rng(3, "fwd");
    for (int trial = 0; trial < 20; ++trial) {
        const auto theta = oracle::random_theta(spec.param_count(), rng);
        const Matrix x = random_x(5, 4, rng);
        const auto t = forward(oracle::to_params(spec, theta), x);
        const auto o = oracle::forward(spec, theta, x);
        REQUIRE(t.features().rows() == 5);
        REQUIRE(t.features().cols() == 5);
        for (Eigen::Index r = 0; r < 5; ++r) {
            CHECK(t.probs(r, 0) + t.probs(r, 1) == doctest::Approx(1.0).epsilon(1e-9));
            for (int j = 0; j < 2; ++j) CHECK(std::abs(t.logits(r, j) - o.logits[r][j]) < 1e-12);
            for (Eigen::Index j = 0; j < 5; ++j) CHECK(std::abs(t.features()(r, j) - o.features[r][j]) < 1e-12);
        }
    }
}

TEST_CASE("forward rejects wrong width") {
    const ModelParams m(small_spec());
    RngStream rng(1, "x");
    CHECK_THROWS_AS(forward(m, random_x(2, 3, rng)), InvalidInput);
}

TEST_CASE("backward: zero upstream leaves grads, linearity, stale trace") {
    const auto spec = small_spec();
    RngStream rng(5, "bwd");
    auto m = oracle::to_params(spec, oracle::random_theta(spec.param_count(), rng));
    const Matrix x = random_x(4, 4, rng);
    const auto t = forward(m, x);

    GradBuffer g(m);
    g.add_scaled(std::vector<double>(m.size(), 0.25));
    const auto before = oracle::to_vector(g);
    backward(m, t, Matrix::Zero(4, 2), Matrix::Zero(4, 5), g);
    CHECK(oracle::to_vector(g) == before);

    Matrix dl(4, 2);
    for (Eigen::Index i = 0; i < dl.size(); ++i) dl.data()[i] = rng.normal();
    GradBuffer g1(m), g2(m);
    backward(m, t, dl, Matrix(), g1);
    backward(m, t, Matrix(2.0 * dl), Matrix(), g2);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(g2[i] == 2.0 * g1[i]);

    m[0] += 1.0;
    CHECK_THROWS_AS(backward(m, t, dl, Matrix(), g1), ContractViolation);
}

TEST_CASE("backward matches finite differences of a feature+logit probe") {
    const auto spec = small_spec();
    RngStream rng(11, "fd");
    for (int trial = 0; trial < 25; ++trial) {
        const auto theta = oracle::random_theta(spec.param_count(), rng);
        Matrix x = random_x(3, 4, rng);
        if (oracle::min_abs_pre(oracle::forward(spec, theta, x)) < 1e-3) continue;
        Matrix wl(3, 2), wf(3, 5);
        for (Eigen::Index i = 0; i < wl.size(); ++i) wl.data()[i] = rng.normal();
        for (Eigen::Index i = 0; i < wf.size(); ++i) wf.data()[i] = rng.normal();
        const auto probe = [&](const std::vector<double>& th) {
            const auto o = oracle::forward(spec, th, x);
            double s = 0;
            for (int r = 0; r < 3; ++r) {
                for (int j = 0; j < 2; ++j) s += wl(r, j) * o.logits[r][j];
                for (int j = 0; j < 5; ++j) s += wf(r, j) * o.features[r][j];
            }
            return s;
        };
        const auto m = oracle::to_params(spec, theta);
        GradBuffer g(m);
        backward(m, forward(m, x), wl, wf, g);
        CHECK(oracle::rel_error(oracle::to_vector(g), oracle::fd_gradient(probe, theta)) <= 1e-4);
    }
}

TEST_CASE("sgd step arithmetic") {
    ModelSpec tiny;
    tiny.input_dim = 1;
    tiny.base_hidden = {1};
    tiny.feature_dim = 1;
    auto m = oracle::to_params(tiny, {1, 2, 3, 4, 5, 6});
    GradBuffer g(m);
    g.add_scaled(std::vector<double>{1, -1, 0, 0, 2, 0});
    sgd_step(m, g, 0.5);
    CHECK(oracle::to_vector(m) == std::vector<double>{0.5, 2.5, 3, 4, 4, 6});

    GradBuffer zero(m);
    const auto before = oracle::to_vector(m);
    sgd_step(m, zero, 0.01);
    CHECK(oracle::to_vector(m) == before);

    ModelParams other(small_spec());
    CHECK_THROWS_AS(sgd_step(other, g, 0.1), ContractViolation);
}

TEST_CASE("squared distance") {
    ModelSpec tiny;
    tiny.input_dim = 1;
    tiny.base_hidden = {1};
    tiny.feature_dim = 1;
    const auto a = oracle::to_params(tiny, {1, 0, 0, 0, 0, 0});
    const auto b = oracle::to_params(tiny, {0, 2, 0, 0, 0, 0});
    CHECK(param_sq_distance(a, b) == 5.0);
    CHECK(param_sq_distance(a, a) == 0.0);

    const auto spec = small_spec();
    RngStream rng(2, "dist");
    for (int i = 0; i < 50; ++i) {
        const auto x = oracle::random_theta(spec.param_count(), rng);
        const auto y = oracle::random_theta(spec.param_count(), rng);
        const double d = param_sq_distance(oracle::to_params(spec, x), oracle::to_params(spec, y));
        CHECK(std::abs(d - oracle::sq_dist(x, y)) <= 1e-12);
        CHECK(d == param_sq_distance(oracle::to_params(spec, y), oracle::to_params(spec, x)));
    }
    CHECK_THROWS_AS(param_sq_distance(a, ModelParams(spec)), ContractViolation);
}
