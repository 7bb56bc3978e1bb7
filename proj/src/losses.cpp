#include "fedl2t/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedl2t/error.hpp"

namespace fedl2t {

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

void add_into(Matrix& dst, const Matrix& src) {
    if (src.size() == 0) return;
    if (dst.size() == 0) {
        dst = src;
    } else {
        dst += src;
    }
}

}  // namespace

LossTerm task_ce(const ForwardTrace& trace, std::span<const int> labels) {
    const std::size_t n = trace.rows();
    if (labels.size() != n) throw InvalidInput("task_ce: label count does not match batch");
    if (n == 0) throw InvalidInput("task_ce: empty batch");
    LossTerm out;
    out.rows = n;
    out.d_logits = trace.probs;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y != 0 && y != 1) throw InvalidInput("task_ce: label " + std::to_string(y) + " outside {0,1}");
        const double p = clamp_prob(trace.probs(static_cast<Eigen::Index>(i), 1));
        sum += -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
        out.d_logits(static_cast<Eigen::Index>(i), y) -= 1.0;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    out.value = sum * inv_n;
    out.d_logits *= inv_n;
    return out;
}

LossTerm kl_output(const Matrix& teacher_probs, const ForwardTrace& student) {
    const std::size_t n = student.rows();
    if (teacher_probs.rows() != student.probs.rows() || teacher_probs.cols() != student.probs.cols()) {
        throw InvalidInput("kl_output: teacher/student shape mismatch");
    }
    if (n == 0) throw InvalidInput("kl_output: empty batch");
    double sum = 0.0;
    for (Eigen::Index r = 0; r < teacher_probs.rows(); ++r) {
        double row_sum = 0.0;
        for (Eigen::Index c = 0; c < teacher_probs.cols(); ++c) {
            const double t = teacher_probs(r, c);
            if (!(t >= 0.0)) throw InvalidInput("kl_output: teacher distribution has a negative entry");
            row_sum += t;
            if (t > 0.0) sum += t * (std::log(t) - std::log(std::max(student.probs(r, c), kProbEps)));
        }
        if (std::abs(row_sum - 1.0) > 1e-6) throw InvalidInput("kl_output: teacher row does not sum to 1");
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    LossTerm out;
    out.rows = n;
    // Mixed rows can give tiny negative round-off; KL is non-negative.
    out.value = std::max(0.0, sum * inv_n);
    out.d_logits = (student.probs - teacher_probs) * inv_n;
    return out;
}

LossTerm mse_features(const Matrix& teacher_features, const ForwardTrace& student) {
    const Matrix& s = student.features();
    if (teacher_features.rows() != s.rows() || teacher_features.cols() != s.cols()) {
        throw InvalidInput("mse_features: teacher/student feature shape mismatch");
    }
    if (s.size() == 0) throw InvalidInput("mse_features: empty batch");
    const double count = static_cast<double>(s.size());
    const Matrix diff = s - teacher_features;
    LossTerm out;
    out.rows = student.rows();
    out.value = diff.squaredNorm() / count;
    out.d_features = diff * (2.0 / count);
    return out;
}

LossTerm adaptive_scale(LossTerm raw, double task_a, double task_b) {
    const double denom = task_a + task_b + kDenomEps;
    raw.value /= denom;
    if (raw.d_logits.size() != 0) raw.d_logits /= denom;
    if (raw.d_features.size() != 0) raw.d_features /= denom;
    for (auto& g : raw.d_params) g /= denom;
    return raw;
}

LossTerm proximal(const ModelParams& p, const ModelParams& t_global, double mu) {
    if (!p.congruent(t_global)) throw ContractViolation("proximal: layout mismatch");
    if (!(mu >= 0.0)) throw InvalidInput("proximal: mu must be >= 0");
    const auto a = p.values();
    const auto b = t_global.values();
    LossTerm out;
    out.d_params.resize(a.size());
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sq += d * d;
        out.d_params[i] = mu * d;
    }
    out.value = 0.5 * mu * sq;
    return out;
}

LossTerm weighted(LossTerm term, double w) {
    term.value *= w;
    if (term.d_logits.size() != 0) term.d_logits *= w;
    if (term.d_features.size() != 0) term.d_features *= w;
    for (auto& g : term.d_params) g *= w;
    return term;
}

LossTerm sum_terms(std::span<const LossTerm* const> terms) {
    LossTerm out;
    for (const LossTerm* t : terms) {
        if (t->rows != 0) {
            if (out.rows != 0 && out.rows != t->rows) throw ContractViolation("loss terms come from different batches");
            out.rows = t->rows;
        }
        out.value += t->value;
        add_into(out.d_logits, t->d_logits);
        add_into(out.d_features, t->d_features);
        if (!t->d_params.empty()) {
            if (out.d_params.empty()) {
                out.d_params = t->d_params;
            } else {
                if (out.d_params.size() != t->d_params.size()) throw ContractViolation("proximal gradient length mismatch");
                for (std::size_t i = 0; i < out.d_params.size(); ++i) out.d_params[i] += t->d_params[i];
            }
        }
    }
    return out;
}

LossTerm compose_T_loss(const TransferLossTerms& terms) {
    const LossTerm* parts[] = {&terms.task, &terms.kl, &terms.feat};
    return sum_terms(parts);
}

LossTerm compose_P_loss(const PersonalLossTerms& terms, double lambda_c) {
    if (!(lambda_c >= 0.0)) throw InvalidInput("compose_P_loss: lambda_c must be >= 0");
    std::vector<const LossTerm*> parts{&terms.task, &terms.kl, &terms.feat};
    LossTerm cross;
    if (lambda_c > 0.0) {
        if (!terms.peer_kl || !terms.peer_feat) {
            throw ContractViolation("compose_P_loss: peer terms are required when lambda_c > 0");
        }
        const LossTerm* peer[] = {&*terms.peer_kl, &*terms.peer_feat};
        cross = weighted(sum_terms(peer), lambda_c);
        parts.push_back(&cross);
    }
    if (terms.prox) parts.push_back(&*terms.prox);
    return sum_terms(parts);
}

}  // namespace fedl2t
