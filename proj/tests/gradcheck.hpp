#pragma once

// Analytic gradients from the library against central differences of the
// oracle losses. Adaptive denominators are held at their value at the
// expansion point, matching the detached denominator.

#include <array>
#include <string_view>

#include "fedl2t/losses.hpp"
#include "oracles.hpp"

namespace gradcheck {

enum class Kind { CE, AdaptiveKL, AdaptiveMSE, MutualKL, Proximal, TotalT, TotalP };

inline constexpr std::array kAllKinds{Kind::CE,       Kind::AdaptiveKL, Kind::AdaptiveMSE, Kind::MutualKL,
                                      Kind::Proximal, Kind::TotalT,     Kind::TotalP};

inline std::string_view name(Kind k) {
    switch (k) {
        case Kind::CE: return "cross-entropy";
        case Kind::AdaptiveKL: return "adaptive KL";
        case Kind::AdaptiveMSE: return "adaptive feature MSE";
        case Kind::MutualKL: return "mutual KL";
        case Kind::Proximal: return "proximal";
        case Kind::TotalT: return "transfer total";
        case Kind::TotalP: return "personalized total";
    }
    return "?";
}

struct Instance {
    fedl2t::ModelSpec spec;
    std::vector<double> p, t, c, g;  // student P, transfer T, peer C, global
    fedl2t::SampleBatch batch;
    double mu = 0.0;
    double lambda_c = 0.0;
};

/// Random shapes and parameters. Inputs are redrawn until every
/// pre-activation of every model is at least 1e-3 away from the kink of
/// the leaky ReLU, so a 1e-5 step never crosses it.
inline Instance random_instance(fedl2t::RngStream& rng) {
    Instance in;
    in.spec.input_dim = 2 + rng.below(4);
    const std::size_t layers = 1 + rng.below(2);
    in.spec.base_hidden.clear();
    for (std::size_t l = 0; l < layers; ++l) in.spec.base_hidden.push_back(2 + rng.below(5));
    in.spec.feature_dim = in.spec.base_hidden.back();
    const std::size_t n = in.spec.param_count();
    in.p = oracle::random_theta(n, rng);
    in.t = oracle::random_theta(n, rng);
    in.c = oracle::random_theta(n, rng);
    in.g = oracle::random_theta(n, rng);
    in.mu = rng.uniform(0.05, 1.0);
    in.lambda_c = rng.uniform(0.0, 1.5);
    const std::size_t rows = 2 + rng.below(6);
    for (;;) {
        in.batch = oracle::random_batch(rows, in.spec.input_dim, rng);
        double margin = 1e300;
        for (const auto* theta : {&in.p, &in.t, &in.c})
            margin = std::min(margin, oracle::min_abs_pre(oracle::forward(in.spec, *theta, in.batch.x)));
        if (margin >= 1e-3) break;
    }
    return in;
}

/// Library gradient of a loss on the student `theta`.
inline std::vector<double> analytic(const fedl2t::ModelSpec& spec, const std::vector<double>& theta,
                                    const fedl2t::ForwardTrace& trace, const fedl2t::LossTerm& term) {
    const auto params = oracle::to_params(spec, theta);
    fedl2t::GradBuffer g(params);
    fedl2t::backward(params, trace, term.d_logits, term.d_features, g);
    if (!term.d_params.empty()) g.add_scaled(term.d_params);
    return oracle::to_vector(g);
}

/// Relative error of one instance for one loss.
inline double check(Kind kind, const Instance& in) {
    using namespace fedl2t;
    const auto& x = in.batch.x;
    const auto& y = in.batch.y;
    const auto P = oracle::to_params(in.spec, in.p);
    const auto T = oracle::to_params(in.spec, in.t);
    const auto C = oracle::to_params(in.spec, in.c);
    const auto G = oracle::to_params(in.spec, in.g);
    const auto fP = forward(P, x);
    const auto fT = forward(T, x);
    const auto fC = forward(C, x);
    const double ceP = task_ce(fP, y).value;
    const double ceT = task_ce(fT, y).value;
    const double ceC = task_ce(fC, y).value;

    const auto oP = oracle::forward(in.spec, in.p, x);
    const auto oT = oracle::forward(in.spec, in.t, x);
    const auto oC = oracle::forward(in.spec, in.c, x);
    const double dPT = oracle::ce(oP, y) + oracle::ce(oT, y) + 1e-8;
    const double dCP = oracle::ce(oC, y) + oracle::ce(oP, y) + 1e-8;
    const auto at = [&](const std::vector<double>& th) { return oracle::forward(in.spec, th, x); };

    std::vector<double> a, n;
    switch (kind) {
        case Kind::CE:
            a = analytic(in.spec, in.p, fP, task_ce(fP, y));
            n = oracle::fd_gradient([&](const auto& th) { return oracle::ce(at(th), y); }, in.p);
            break;
        case Kind::AdaptiveKL:
            a = analytic(in.spec, in.p, fP, adaptive_scale(kl_output(fC.probs, fP), ceC, ceP));
            n = oracle::fd_gradient([&](const auto& th) { return oracle::kl(oC.probs, at(th).probs) / dCP; }, in.p);
            break;
        case Kind::AdaptiveMSE:
            a = analytic(in.spec, in.p, fP, adaptive_scale(mse_features(fC.features(), fP), ceC, ceP));
            n = oracle::fd_gradient([&](const auto& th) { return oracle::mse(oC.features, at(th).features) / dCP; },
                                    in.p);
            break;
        case Kind::MutualKL: {
            // Both directions: T learns from P, P learns from T.
            a = analytic(in.spec, in.t, fT, adaptive_scale(kl_output(fP.probs, fT), ceP, ceT));
            const auto aP = analytic(in.spec, in.p, fP, adaptive_scale(kl_output(fT.probs, fP), ceP, ceT));
            a.insert(a.end(), aP.begin(), aP.end());
            n = oracle::fd_gradient([&](const auto& th) { return oracle::kl(oP.probs, at(th).probs) / dPT; }, in.t);
            const auto nP =
                oracle::fd_gradient([&](const auto& th) { return oracle::kl(oT.probs, at(th).probs) / dPT; }, in.p);
            n.insert(n.end(), nP.begin(), nP.end());
            break;
        }
        case Kind::Proximal:
            a = analytic(in.spec, in.p, fP, proximal(P, G, in.mu));
            n = oracle::fd_gradient([&](const auto& th) { return 0.5 * in.mu * oracle::sq_dist(th, in.g); }, in.p);
            break;
        case Kind::TotalT: {
            TransferLossTerms terms{task_ce(fT, y), adaptive_scale(kl_output(fP.probs, fT), ceP, ceT),
                                    adaptive_scale(mse_features(fP.features(), fT), ceP, ceT)};
            a = analytic(in.spec, in.t, fT, compose_T_loss(terms));
            n = oracle::fd_gradient(
                [&](const auto& th) {
                    const auto o = at(th);
                    return oracle::ce(o, y) + (oracle::kl(oP.probs, o.probs) + oracle::mse(oP.features, o.features)) / dPT;
                },
                in.t);
            break;
        }
        case Kind::TotalP: {
            PersonalLossTerms terms{task_ce(fP, y),
                                    adaptive_scale(kl_output(fT.probs, fP), ceP, ceT),
                                    adaptive_scale(mse_features(fT.features(), fP), ceP, ceT),
                                    adaptive_scale(kl_output(fC.probs, fP), ceC, ceP),
                                    adaptive_scale(mse_features(fC.features(), fP), ceC, ceP),
                                    proximal(P, G, in.mu)};
            a = analytic(in.spec, in.p, fP, compose_P_loss(terms, in.lambda_c));
            n = oracle::fd_gradient(
                [&](const auto& th) {
                    const auto o = at(th);
                    return oracle::ce(o, y) + (oracle::kl(oT.probs, o.probs) + oracle::mse(oT.features, o.features)) / dPT +
                           in.lambda_c * (oracle::kl(oC.probs, o.probs) + oracle::mse(oC.features, o.features)) / dCP +
                           0.5 * in.mu * oracle::sq_dist(th, in.g);
                },
                in.p);
            break;
        }
    }
    return oracle::rel_error(a, n);
}

}  // namespace gradcheck
