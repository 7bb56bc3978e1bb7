#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "fedl2t/batch.hpp"
#include "fedl2t/rng.hpp"

namespace fedl2t {

inline constexpr double kLeakySlope = 0.01;

/// Base block: dense + leaky-ReLU layers with widths `base_hidden`, the last
/// of which is the feature width. Head block: one dense layer to 2 logits.
struct ModelSpec {
    std::size_t input_dim = 16;
    std::vector<std::size_t> base_hidden{64, 128};
    std::size_t feature_dim = 128;
    std::size_t num_classes = 2;

    /// Throws ConfigError on an invalid shape.
    void validate() const;
    std::size_t param_count() const;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct DenseLayout {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t weight_offset = 0;  // out x in, row-major
    std::size_t bias_offset = 0;
};

/// Offsets of every layer inside the flat parameter vector. The last entry
/// is the head; all earlier ones belong to the base block.
struct Layout {
    ModelSpec spec;
    std::vector<DenseLayout> layers;
    std::size_t total = 0;

    explicit Layout(ModelSpec s);
    const DenseLayout& head() const { return layers.back(); }
    std::size_t base_layers() const { return layers.size() - 1; }
};

/// Shared flat-vector storage for parameters and gradients.
class FlatParams {
public:
    explicit FlatParams(const ModelSpec& spec);

    const ModelSpec& spec() const { return layout_->spec; }
    const Layout& layout() const { return *layout_; }
    std::size_t size() const { return values_.size(); }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    bool congruent(const FlatParams& other) const {
        return layout_ == other.layout_ || layout_->spec == other.layout_->spec;
    }

    friend bool operator==(const FlatParams& a, const FlatParams& b) {
        return a.congruent(b) && a.values_ == b.values_;
    }

protected:
    FlatParams(std::shared_ptr<const Layout> layout, std::vector<double> values)
        : layout_(std::move(layout)), values_(std::move(values)) {}

    std::shared_ptr<const Layout> layout_;
    std::vector<double> values_;
};

class ModelParams : public FlatParams {
public:
    using FlatParams::FlatParams;

    /// Stable content hash; a ForwardTrace remembers the hash of the
    /// parameters that produced it.
    std::uint64_t fingerprint() const;

    friend class GradBuffer;
};

class GradBuffer : public FlatParams {
public:
    /// Zero gradient congruent with `model`.
    explicit GradBuffer(const ModelParams& model) : FlatParams(model.layout_, std::vector<double>(model.size(), 0.0)) {}

    void zero();
    /// this += scale * other
    void add_scaled(std::span<const double> other, double scale = 1.0);
};

/// Everything backward needs, plus the quantities the losses read.
struct ForwardTrace {
    std::vector<Matrix> pre;  // base-layer pre-activations
    std::vector<Matrix> act;  // act[0] is the input; act[i + 1] = leaky(pre[i])
    Matrix logits;
    Matrix probs;
    std::uint64_t params_fingerprint = 0;

    /// Base-block output, the exact input of the head.
    const Matrix& features() const { return act.back(); }
    std::size_t rows() const { return static_cast<std::size_t>(logits.rows()); }
};

/// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero biases.
ModelParams init_model(const ModelSpec& spec, RngStream& rng);

/// Throws InvalidInput when x.cols() != spec.input_dim.
ForwardTrace forward(const ModelParams& params, const Matrix& x);

/// Row-wise softmax at temperature 1.
Matrix softmax(const Matrix& logits);

/// Accumulates into `grads` the gradient of sum(d_logits .* logits) +
/// sum(d_features .* features). Either upstream may be an empty matrix.
/// Throws ContractViolation when `trace` was not produced by `params` or
/// shapes disagree.
void backward(const ModelParams& params, const ForwardTrace& trace, const Matrix& d_logits,
              const Matrix& d_features, GradBuffer& grads);

/// params -= eta * grads
void sgd_step(ModelParams& params, const GradBuffer& grads, double eta);

double param_sq_distance(const ModelParams& a, const ModelParams& b);

}  // namespace fedl2t
