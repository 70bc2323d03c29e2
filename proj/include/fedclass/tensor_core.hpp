#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fedclass/matrix.hpp"

namespace fedclass {

inline constexpr double kProbFloor = 1e-12;

// One affine layer of the classifier. ReLU is applied between layers,
// never after the last one.
struct Layer {
    Matrix weights;               // [out x in]
    std::vector<double> biases;   // [out]
};

struct ModelParams {
    std::vector<Layer> layers;

    std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().weights.rows; }
    std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().weights.cols; }

    bool same_shape(const ModelParams& other) const;
    bool all_finite() const;
};

// Gradient (or momentum velocity) shaped like a ModelParams.
using ParamGrads = ModelParams;

struct OptimizerState {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-5;
    ParamGrads velocity;  // zero-initialized to the model shape on first use

    static OptimizerState create(double lr, double momentum, double weight_decay,
                                 const ModelParams& shape);
};

struct Batch {
    Matrix inputs;            // [batch x features]
    std::vector<int> labels;  // class indices, may be empty for pure-distill specs

    std::size_t size() const { return inputs.rows; }
};

struct ScoreVector {
    std::vector<double> probs;

    std::size_t size() const { return probs.size(); }
    double operator[](std::size_t i) const { return probs[i]; }
};

enum class KlDirection { kTargetFirst, kStudentFirst };

// Identifies the scalar loss that `backward` differentiates.
struct LossSpec {
    enum class Kind { kCrossEntropy, kDistill, kCrossEntropyPlusDistill, kSquaredError };

    Kind kind = Kind::kCrossEntropy;
    double beta = 1.0;   // weight on the distillation term
    double theta = 1.0;  // distillation temperature
    Matrix targets;      // per-sample rows: soft labels (distill) or regression targets
    KlDirection kl_direction = KlDirection::kTargetFirst;
    bool kd_theta_squared = false;
};

// Construction helpers -------------------------------------------------------

ModelParams make_mlp(std::size_t input_dim, std::size_t hidden_width, std::size_t output_dim,
                     std::uint64_t seed);
ModelParams zeros_like(const ModelParams& params);

// Core operations -------------------------------------------------------------

Matrix forward(const ModelParams& params, const Batch& batch);

ScoreVector softmax_temp(const std::vector<double>& logits, double theta);

double cross_entropy(const ScoreVector& scores, int label);

double kl_divergence(const ScoreVector& target, const ScoreVector& student);

struct LossAndGrads {
    double loss = 0.0;
    ParamGrads grads;
};

LossAndGrads backward(const ModelParams& params, const Batch& batch, const LossSpec& spec);

// Backprop from an externally supplied dLoss/dlogits matrix (same shape as
// forward()'s output, already including any 1/batch averaging). Used by the
// distillation module, whose logit gradients depend on a second model.
ParamGrads backward_from_logit_grads(const ModelParams& params, const Batch& batch,
                                     const Matrix& logit_grads);

void sgd_step(ModelParams& params, const ParamGrads& grads, OptimizerState& opt);

double finite_diff_check(const ModelParams& params, const Batch& batch, const LossSpec& spec,
                         double eps);

// Worst relative error between an analytic gradient and central differences of
// an arbitrary scalar loss. `loss_fn(p)` must be deterministic.
template <typename LossFn>
double finite_diff_check_fn(const ModelParams& params, const ParamGrads& analytic, LossFn&& loss_fn,
                            double eps) {
    ModelParams p = params;
    double worst = 0.0;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        auto check = [&](double& slot, double grad) {
            const double saved = slot;
            slot = saved + eps;
            const double up = loss_fn(p);
            slot = saved - eps;
            const double down = loss_fn(p);
            slot = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double denom = std::max({std::abs(grad), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(grad - numeric) / denom);
        };
        for (std::size_t i = 0; i < p.layers[l].weights.data.size(); ++i)
            check(p.layers[l].weights.data[i], analytic.layers[l].weights.data[i]);
        for (std::size_t i = 0; i < p.layers[l].biases.size(); ++i)
            check(p.layers[l].biases[i], analytic.layers[l].biases[i]);
    }
    return worst;
}

}  // namespace fedclass
