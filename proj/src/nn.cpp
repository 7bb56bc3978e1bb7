#include "fedl2t/nn.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "fedl2t/error.hpp"

namespace fedl2t {

namespace {

using ConstMatMap = Eigen::Map<const Matrix>;
using MatMap = Eigen::Map<Matrix>;
using ConstRowMap = Eigen::Map<const Eigen::RowVectorXd>;
using RowMap = Eigen::Map<Eigen::RowVectorXd>;

ConstMatMap weights(std::span<const double> v, const DenseLayout& l) {
    return ConstMatMap(v.data() + l.weight_offset, static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in));
}

ConstRowMap bias(std::span<const double> v, const DenseLayout& l) {
    return ConstRowMap(v.data() + l.bias_offset, static_cast<Eigen::Index>(l.out));
}

Matrix dense(const Matrix& in, std::span<const double> v, const DenseLayout& l) {
    Matrix out(in.rows(), static_cast<Eigen::Index>(l.out));
    out.noalias() = in * weights(v, l).transpose();
    out.rowwise() += bias(v, l);
    return out;
}

Matrix leaky(const Matrix& pre) {
    return pre.unaryExpr([](double z) { return z > 0.0 ? z : kLeakySlope * z; });
}

Matrix leaky_grad(const Matrix& pre) {
    return pre.unaryExpr([](double z) { return z > 0.0 ? 1.0 : kLeakySlope; });
}

void check_shape(const Matrix& m, const Matrix& ref_shape_rows, std::size_t cols, const char* what) {
    if (m.size() == 0) return;
    if (m.rows() != ref_shape_rows.rows() || static_cast<std::size_t>(m.cols()) != cols) {
        throw ContractViolation(std::string("backward: ") + what + " shape mismatch");
    }
}

}  // namespace

void ModelSpec::validate() const {
    if (input_dim < 1) throw ConfigError("must be >= 1", "input_dim");
    if (base_hidden.empty()) throw ConfigError("base block needs at least one layer", "base_hidden");
    for (auto w : base_hidden) {
        if (w < 1) throw ConfigError("widths must be >= 1", "base_hidden");
    }
    if (feature_dim < 1) throw ConfigError("must be >= 1", "feature_dim");
    if (base_hidden.back() != feature_dim) {
        throw ConfigError("last base_hidden width must equal feature_dim", "feature_dim");
    }
    if (num_classes != 2) throw ConfigError("only binary classification is supported", "num_classes");
}

std::size_t ModelSpec::param_count() const { return Layout(*this).total; }

Layout::Layout(ModelSpec s) : spec(std::move(s)) {
    spec.validate();
    std::size_t in = spec.input_dim;
    auto push = [&](std::size_t out) {
        DenseLayout l;
        l.in = in;
        l.out = out;
        l.weight_offset = total;
        l.bias_offset = total + in * out;
        total += in * out + out;
        layers.push_back(l);
        in = out;
    };
    for (auto w : spec.base_hidden) push(w);
    push(spec.num_classes);
}

FlatParams::FlatParams(const ModelSpec& spec) : layout_(std::make_shared<const Layout>(spec)) {
    values_.assign(layout_->total, 0.0);
}

std::uint64_t ModelParams::fingerprint() const {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL ^ values_.size();
    for (double v : values_) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        h ^= bits + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return h;
}

void GradBuffer::zero() { std::fill(values_.begin(), values_.end(), 0.0); }

void GradBuffer::add_scaled(std::span<const double> other, double scale) {
    if (other.size() != values_.size()) throw ContractViolation("GradBuffer::add_scaled: length mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other[i];
}

ModelParams init_model(const ModelSpec& spec, RngStream& rng) {
    ModelParams params(spec);
    auto v = params.values();
    for (const auto& l : params.layout().layers) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
        for (std::size_t i = 0; i < l.in * l.out; ++i) v[l.weight_offset + i] = rng.uniform(-bound, bound);
    }
    return params;
}

Matrix softmax(const Matrix& logits) {
    Matrix probs(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double m = logits.row(r).maxCoeff();
        double z = 0.0;
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            probs(r, c) = std::exp(logits(r, c) - m);
            z += probs(r, c);
        }
        probs.row(r) /= z;
    }
    return probs;
}

ForwardTrace forward(const ModelParams& params, const Matrix& x) {
    const auto& layout = params.layout();
    if (static_cast<std::size_t>(x.cols()) != layout.spec.input_dim) {
        throw InvalidInput("forward: expected " + std::to_string(layout.spec.input_dim) + " features, got " +
                           std::to_string(x.cols()));
    }
    const auto v = params.values();
    ForwardTrace t;
    t.params_fingerprint = params.fingerprint();
    t.act.reserve(layout.base_layers() + 1);
    t.pre.reserve(layout.base_layers());
    t.act.push_back(x);
    for (std::size_t i = 0; i < layout.base_layers(); ++i) {
        t.pre.push_back(dense(t.act.back(), v, layout.layers[i]));
        t.act.push_back(leaky(t.pre.back()));
    }
    t.logits = dense(t.act.back(), v, layout.head());
    t.probs = softmax(t.logits);
    return t;
}

void backward(const ModelParams& params, const ForwardTrace& trace, const Matrix& d_logits,
              const Matrix& d_features, GradBuffer& grads) {
    const auto& layout = params.layout();
    if (!grads.congruent(params)) throw ContractViolation("backward: gradient buffer layout mismatch");
    if (trace.act.size() != layout.base_layers() + 1 || trace.params_fingerprint != params.fingerprint()) {
        throw ContractViolation("backward: trace is stale or from another model");
    }
    check_shape(d_logits, trace.logits, layout.spec.num_classes, "d_logits");
    check_shape(d_features, trace.logits, layout.spec.feature_dim, "d_features");
    if (d_logits.size() == 0 && d_features.size() == 0) return;

    const auto v = params.values();
    auto g = grads.values();
    auto accumulate = [&](const DenseLayout& l, const Matrix& d_out, const Matrix& in) {
        MatMap(g.data() + l.weight_offset, static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in))
            .noalias() += d_out.transpose() * in;
        RowMap(g.data() + l.bias_offset, static_cast<Eigen::Index>(l.out)) += d_out.colwise().sum();
    };

    Matrix d_act;
    if (d_logits.size() != 0) {
        accumulate(layout.head(), d_logits, trace.features());
        d_act = d_logits * weights(v, layout.head());
        if (d_features.size() != 0) d_act += d_features;
    } else {
        d_act = d_features;
    }

    for (std::size_t i = layout.base_layers(); i-- > 0;) {
        const auto& l = layout.layers[i];
        const Matrix d_pre = d_act.cwiseProduct(leaky_grad(trace.pre[i]));
        accumulate(l, d_pre, trace.act[i]);
        if (i > 0) d_act = d_pre * weights(v, l);
    }
}

void sgd_step(ModelParams& params, const GradBuffer& grads, double eta) {
    if (!grads.congruent(params)) throw ContractViolation("sgd_step: layout mismatch");
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw InvalidInput("sgd_step: eta must be finite and >= 0");
    auto p = params.values();
    const auto g = grads.values();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= eta * g[i];
}

double param_sq_distance(const ModelParams& a, const ModelParams& b) {
    if (!a.congruent(b)) throw ContractViolation("param_sq_distance: layout mismatch");
    const auto x = a.values();
    const auto y = b.values();
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

}  // namespace fedl2t
