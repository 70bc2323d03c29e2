#include "fedclass/tensor_core.hpp"

#include <cmath>
#include <random>
#include <string>

#include "fedclass/rng.hpp"

namespace fedclass {
namespace {

// Forward pass keeping per-layer pre-activations for backprop.
struct ForwardTrace {
    // activations[0] is the input row; activations[l+1] = relu(pre[l]) except
    // for the last layer, where the raw pre-activation is the logit row.
    std::vector<std::vector<double>> pre;
    std::vector<std::vector<double>> activations;
};

ForwardTrace forward_row(const ModelParams& params, const double* x, std::size_t features) {
    ForwardTrace tr;
    tr.activations.emplace_back(x, x + features);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const Layer& layer = params.layers[l];
        std::vector<double> z = affine(layer.weights, layer.biases, tr.activations.back().data());
        tr.pre.push_back(z);
        if (l + 1 < params.layers.size())
            for (double& v : z) v = std::max(v, 0.0);
        tr.activations.push_back(std::move(z));
    }
    return tr;
}

void check_batch_shape(const ModelParams& params, const Batch& batch) {
    if (batch.size() == 0) throw ValidationError("batch is empty");
    if (params.layers.empty()) throw DimensionError("model has no layers");
    if (batch.inputs.cols != params.input_dim())
        throw DimensionError("input feature dim " + std::to_string(batch.inputs.cols) +
                             " does not match first layer in-dim " +
                             std::to_string(params.input_dim()));
}

// dLoss/dlogits for one sample under `spec`, including the 1/batch factor.
std::vector<double> logit_grad_row(const LossSpec& spec, const std::vector<double>& logits,
                                   int label, const double* target, double inv_batch) {
    const std::size_t n = logits.size();
    std::vector<double> g(n, 0.0);

    const bool want_ce = spec.kind == LossSpec::Kind::kCrossEntropy ||
                         spec.kind == LossSpec::Kind::kCrossEntropyPlusDistill;
    const bool want_kd = spec.kind == LossSpec::Kind::kDistill ||
                         spec.kind == LossSpec::Kind::kCrossEntropyPlusDistill;
    const double kd_weight =
        (spec.kind == LossSpec::Kind::kDistill ? 1.0 : spec.beta) *
        (spec.kd_theta_squared ? spec.theta * spec.theta : 1.0);

    if (spec.kind == LossSpec::Kind::kSquaredError) {
        for (std::size_t j = 0; j < n; ++j) g[j] = (logits[j] - target[j]) * inv_batch;
        return g;
    }
    if (want_ce) {
        const ScoreVector p = softmax_temp(logits, 1.0);
        for (std::size_t j = 0; j < n; ++j) g[j] += p.probs[j] * inv_batch;
        g[static_cast<std::size_t>(label)] -= inv_batch;
    }
    if (want_kd) {
        const ScoreVector s = softmax_temp(logits, spec.theta);
        if (spec.kl_direction == KlDirection::kTargetFirst) {
            // d/dlogit_j KL(z || softmax(logits/theta)) = (s_j - z_j)/theta
            for (std::size_t j = 0; j < n; ++j)
                g[j] += kd_weight * (s.probs[j] - target[j]) / spec.theta * inv_batch;
        } else {
            // KL(s || z): push dL/ds through the tempered softmax jacobian.
            std::vector<double> dLds(n);
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double z = std::max(target[j], kProbFloor);
                const double sj = std::max(s.probs[j], kProbFloor);
                dLds[j] = std::log(sj / z) + 1.0;
                dot += s.probs[j] * dLds[j];
            }
            for (std::size_t j = 0; j < n; ++j)
                g[j] += kd_weight * s.probs[j] * (dLds[j] - dot) / spec.theta * inv_batch;
        }
    }
    return g;
}

double loss_row(const LossSpec& spec, const std::vector<double>& logits, int label,
                const double* target) {
    if (spec.kind == LossSpec::Kind::kSquaredError) {
        double acc = 0.0;
        for (std::size_t j = 0; j < logits.size(); ++j) {
            const double d = logits[j] - target[j];
            acc += 0.5 * d * d;
        }
        return acc;
    }
    double loss = 0.0;
    if (spec.kind != LossSpec::Kind::kDistill)
        loss += cross_entropy(softmax_temp(logits, 1.0), label);
    if (spec.kind != LossSpec::Kind::kCrossEntropy) {
        const double kd_weight =
            (spec.kind == LossSpec::Kind::kDistill ? 1.0 : spec.beta) *
            (spec.kd_theta_squared ? spec.theta * spec.theta : 1.0);
        const ScoreVector s = softmax_temp(logits, spec.theta);
        ScoreVector z;
        z.probs.assign(target, target + logits.size());
        const double kd = spec.kl_direction == KlDirection::kTargetFirst ? kl_divergence(z, s)
                                                                         : kl_divergence(s, z);
        loss += kd_weight * kd;
    }
    return loss;
}

}  // namespace

bool ModelParams::same_shape(const ModelParams& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (!layers[l].weights.same_shape(other.layers[l].weights)) return false;
        if (layers[l].biases.size() != other.layers[l].biases.size()) return false;
    }
    return true;
}

bool ModelParams::all_finite() const {
    for (const Layer& layer : layers) {
        if (!layer.weights.all_finite()) return false;
        for (double v : layer.biases)
            if (!std::isfinite(v)) return false;
    }
    return true;
}

OptimizerState OptimizerState::create(double lr, double momentum, double weight_decay,
                                      const ModelParams& shape) {
    if (lr <= 0.0) throw ParameterError("learning rate must be positive");
    OptimizerState opt;
    opt.lr = lr;
    opt.momentum = momentum;
    opt.weight_decay = weight_decay;
    opt.velocity = zeros_like(shape);
    return opt;
}

ModelParams make_mlp(std::size_t input_dim, std::size_t hidden_width, std::size_t output_dim,
                     std::uint64_t seed) {
    auto gen = rng::engine(seed, {rng::kTagInit});
    ModelParams params;
    std::vector<std::size_t> dims;
    dims.push_back(input_dim);
    if (hidden_width > 0) dims.push_back(hidden_width);
    dims.push_back(output_dim);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Layer layer;
        layer.weights = Matrix(dims[l + 1], dims[l]);
        layer.biases.assign(dims[l + 1], 0.0);
        // He-style scale, suited to the ReLU hidden layer
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(dims[l])));
        for (double& w : layer.weights.data) w = dist(gen);
        params.layers.push_back(std::move(layer));
    }
    return params;
}

ModelParams zeros_like(const ModelParams& params) {
    ModelParams out = params;
    for (Layer& layer : out.layers) {
        std::fill(layer.weights.data.begin(), layer.weights.data.end(), 0.0);
        std::fill(layer.biases.begin(), layer.biases.end(), 0.0);
    }
    return out;
}

Matrix forward(const ModelParams& params, const Batch& batch) {
    check_batch_shape(params, batch);
    Matrix logits(batch.size(), params.output_dim());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const ForwardTrace tr = forward_row(params, batch.inputs.row(i), batch.inputs.cols);
        const std::vector<double>& out = tr.activations.back();
        std::copy(out.begin(), out.end(), logits.row(i));
    }
    return logits;
}

ScoreVector softmax_temp(const std::vector<double>& logits, double theta) {
    if (theta <= 0.0) throw ParameterError("softmax temperature must be positive");
    if (logits.empty()) throw DimensionError("empty logit vector");
    double max_scaled = logits[0] / theta;
    for (double v : logits) max_scaled = std::max(max_scaled, v / theta);
    ScoreVector out;
    out.probs.resize(logits.size());
    double total = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        out.probs[j] = std::exp(logits[j] / theta - max_scaled);
        total += out.probs[j];
    }
    for (double& p : out.probs) p /= total;
    return out;
}

double cross_entropy(const ScoreVector& scores, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= scores.size())
        throw std::out_of_range("label " + std::to_string(label) + " out of range for " +
                                std::to_string(scores.size()) + " classes");
    return -std::log(std::max(scores.probs[static_cast<std::size_t>(label)], kProbFloor));
}

double kl_divergence(const ScoreVector& target, const ScoreVector& student) {
    if (target.size() != student.size())
        throw DimensionError("kl_divergence dimension mismatch");
    double acc = 0.0;
    for (std::size_t j = 0; j < target.size(); ++j) {
        const double t = target.probs[j];
        if (t <= 0.0) continue;  // 0 * log 0 := 0
        acc += t * std::log(t / std::max(student.probs[j], kProbFloor));
    }
    return acc;
}

LossAndGrads backward(const ModelParams& params, const Batch& batch, const LossSpec& spec) {
    check_batch_shape(params, batch);
    const bool needs_targets = spec.kind != LossSpec::Kind::kCrossEntropy;
    if (needs_targets &&
        (batch.size() != spec.targets.rows || params.output_dim() != spec.targets.cols))
        throw ParameterError("loss_spec targets shape does not match batch/output");
    const bool needs_labels = spec.kind == LossSpec::Kind::kCrossEntropy ||
                              spec.kind == LossSpec::Kind::kCrossEntropyPlusDistill;
    if (needs_labels && batch.labels.size() != batch.size())
        throw ParameterError("loss_spec requires one label per sample");

    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    Matrix logit_grads(batch.size(), params.output_dim());
    double loss = 0.0;
    const Matrix logits = forward(params, batch);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::vector<double> row(logits.row(i), logits.row(i) + logits.cols);
        const int label = needs_labels ? batch.labels[i] : -1;
        const double* target = needs_targets ? spec.targets.row(i) : nullptr;
        if (needs_labels && (label < 0 || static_cast<std::size_t>(label) >= logits.cols))
            throw std::out_of_range("batch label out of range");
        loss += loss_row(spec, row, label, target) * inv_batch;
        const std::vector<double> g = logit_grad_row(spec, row, label, target, inv_batch);
        std::copy(g.begin(), g.end(), logit_grads.row(i));
    }
    return {loss, backward_from_logit_grads(params, batch, logit_grads)};
}

ParamGrads backward_from_logit_grads(const ModelParams& params, const Batch& batch,
                                     const Matrix& logit_grads) {
    check_batch_shape(params, batch);
    if (logit_grads.rows != batch.size() || logit_grads.cols != params.output_dim())
        throw DimensionError("logit gradient shape does not match batch/output");
    ParamGrads grads = zeros_like(params);
    const std::size_t last = params.layers.size() - 1;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const ForwardTrace tr = forward_row(params, batch.inputs.row(i), batch.inputs.cols);
        std::vector<double> delta(logit_grads.row(i), logit_grads.row(i) + logit_grads.cols);
        for (std::size_t l = last + 1; l-- > 0;) {
            const Layer& layer = params.layers[l];
            Layer& g = grads.layers[l];
            const std::vector<double>& a_in = tr.activations[l];
            for (std::size_t r = 0; r < layer.weights.rows; ++r) {
                const double d = delta[r];
                g.biases[r] += d;
                double* grow = g.weights.row(r);
                for (std::size_t c = 0; c < layer.weights.cols; ++c) grow[c] += d * a_in[c];
            }
            if (l == 0) break;
            std::vector<double> prev(layer.weights.cols, 0.0);
            for (std::size_t r = 0; r < layer.weights.rows; ++r) {
                const double d = delta[r];
                const double* wrow = layer.weights.row(r);
                for (std::size_t c = 0; c < layer.weights.cols; ++c) prev[c] += d * wrow[c];
            }
            // ReLU mask from the preceding layer's pre-activation
            const std::vector<double>& pre = tr.pre[l - 1];
            for (std::size_t c = 0; c < prev.size(); ++c)
                if (pre[c] <= 0.0) prev[c] = 0.0;
            delta = std::move(prev);
        }
    }
    return grads;
}

void sgd_step(ModelParams& params, const ParamGrads& grads, OptimizerState& opt) {
    if (!params.same_shape(grads) || !params.same_shape(opt.velocity))
        throw DimensionError("sgd_step shape mismatch");
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        Layer& p = params.layers[l];
        const Layer& g = grads.layers[l];
        Layer& v = opt.velocity.layers[l];
        for (std::size_t i = 0; i < p.weights.data.size(); ++i) {
            v.weights.data[i] = opt.momentum * v.weights.data[i] +
                                (g.weights.data[i] + opt.weight_decay * p.weights.data[i]);
            p.weights.data[i] -= opt.lr * v.weights.data[i];
        }
        for (std::size_t i = 0; i < p.biases.size(); ++i) {
            v.biases[i] = opt.momentum * v.biases[i] + (g.biases[i] + opt.weight_decay * p.biases[i]);
            p.biases[i] -= opt.lr * v.biases[i];
        }
    }
}

double finite_diff_check(const ModelParams& params, const Batch& batch, const LossSpec& spec,
                         double eps) {
    if (eps <= 0.0) throw ParameterError("finite-difference eps must be positive");
    const LossAndGrads ag = backward(params, batch, spec);
    return finite_diff_check_fn(
        params, ag.grads,
        [&](const ModelParams& p) { return backward(p, batch, spec).loss; }, eps);
}

}  // namespace fedclass
