#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fedl2t/nn.hpp"

namespace fedl2t {

/// Probability clamp used by every log.
inline constexpr double kProbEps = 1e-12;
/// Added to adaptive denominators.
inline constexpr double kDenomEps = 1e-8;

/// A scalar loss and its student-side upstream gradients. Absent gradients
/// are empty. Teacher-side inputs never receive a gradient.
struct LossTerm {
    double value = 0.0;
    Matrix d_logits;              // rows x 2
    Matrix d_features;            // rows x feature_dim
    std::vector<double> d_params; // proximal term only
    std::size_t rows = 0;         // batch the term was computed on; 0 for parameter-only terms
};

/// Mean binary cross-entropy on the class-1 probability, clamped to
/// [kProbEps, 1 - kProbEps]. d_logits = (probs - one_hot) / n.
LossTerm task_ce(const ForwardTrace& trace, std::span<const int> labels);

/// Mean over rows of KL(teacher || student), teacher first. The teacher is
/// a constant; d_logits = (s - t) / n.
LossTerm kl_output(const Matrix& teacher_probs, const ForwardTrace& student);

/// Mean over rows and feature columns of squared differences;
/// d_features = 2 (s - t) / (n * feature_dim).
LossTerm mse_features(const Matrix& teacher_features, const ForwardTrace& student);

/// Divides value and every gradient by (task_a + task_b + kDenomEps). The
/// denominator is detached: it contributes no gradient.
LossTerm adaptive_scale(LossTerm raw, double task_a, double task_b);

/// (mu / 2) ||p - t_global||^2 with d_params = mu (p - t_global).
LossTerm proximal(const ModelParams& p, const ModelParams& t_global, double mu);

/// Multiplies value and gradients by `w`.
LossTerm weighted(LossTerm term, double w);

/// Terms of the transfer-model objective: task + (kl + feat), with the
/// personalized model as the teacher of both distillation terms.
struct TransferLossTerms {
    LossTerm task;
    LossTerm kl;
    LossTerm feat;
};

/// Terms of the personalized-model objective:
/// task + (kl + feat) + lambda_c (peer_kl + peer_feat) + prox.
/// `kl` and `feat` use the transfer model as teacher; peer terms use the
/// frozen peer. Peer terms may be absent only when lambda_c == 0.
struct PersonalLossTerms {
    LossTerm task;
    LossTerm kl;
    LossTerm feat;
    std::optional<LossTerm> peer_kl;
    std::optional<LossTerm> peer_feat;
    std::optional<LossTerm> prox;
};

LossTerm compose_T_loss(const TransferLossTerms& terms);
LossTerm compose_P_loss(const PersonalLossTerms& terms, double lambda_c);

/// Sums terms computed on the same batch. Throws ContractViolation when the
/// batches disagree.
LossTerm sum_terms(std::span<const LossTerm* const> terms);

}  // namespace fedl2t
