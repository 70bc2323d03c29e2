#include "fedclass/distillation.hpp"

#include <cmath>
#include <string>

namespace fedclass {
namespace {

void validate_distribution(const ScoreVector& p, const char* name) {
    double total = 0.0;
    for (double v : p.probs) {
        if (!(v >= 0.0 && v <= 1.0 + 1e-12))
            throw ValidationError(std::string(name) + " has entries outside [0,1]");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw ValidationError(std::string(name) + " does not sum to 1");
}

// Per-sample dLoss/d(curr logits) for the augmented KD term, including the
// gradient through the target z when detach_target is off. Mass below the
// probability floor is left unfloored here; the floor only guards the logs.
std::vector<double> kd_logit_grad(const std::vector<double>& z, const std::vector<double>& q,
                                  const ScoreVector& s, const ClassSplit& split,
                                  const DistillConfig& cfg, bool through_target) {
    const std::size_t n = split.total();
    std::vector<double> dLds(n, 0.0);
    std::vector<double> dLdz(n, 0.0);

    if (cfg.kl_direction == KlDirection::kTargetFirst) {
        // L = sum_j z_j log(z_j / s_j)
        for (std::size_t j = 0; j < n; ++j) {
            dLds[j] = -z[j] / std::max(s.probs[j], kProbFloor);
            dLdz[j] = std::log(std::max(z[j], kProbFloor) / std::max(s.probs[j], kProbFloor)) + 1.0;
        }
    } else {
        // L = sum_j s_j log(s_j / z_j)
        for (std::size_t j = 0; j < n; ++j) {
            dLds[j] = std::log(std::max(s.probs[j], kProbFloor) / std::max(z[j], kProbFloor)) + 1.0;
            dLdz[j] = -s.probs[j] / std::max(z[j], kProbFloor);
        }
    }

    if (through_target) {
        // z depends on s: z_c = s_c on new classes, z_j = q_j (1 - M) on old
        // classes with M the total new-class mass of s.
        double old_pull = 0.0;
        for (std::size_t j = 0; j < split.old_count; ++j) old_pull += q[j] * dLdz[j];
        for (std::size_t c = split.old_count; c < n; ++c) dLds[c] += dLdz[c] - old_pull;
    }

    // Through the tempered softmax: dlogit_k = s_k (dLds_k - sum_j s_j dLds_j) / theta
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += s.probs[j] * dLds[j];
    std::vector<double> g(n);
    for (std::size_t j = 0; j < n; ++j) g[j] = s.probs[j] * (dLds[j] - dot) / cfg.theta;
    return g;
}

}  // namespace

ScoreVector augment_scores(const std::vector<double>& hist_logits,
                           const std::vector<double>& curr_logits, const ClassSplit& split,
                           double theta) {
    if (split.new_count < 1) throw ValidationError("class split requires at least one new class");
    if (hist_logits.size() != split.old_count || curr_logits.size() != split.total())
        throw DimensionError("augment_scores logit dimensions do not match class split");
    const ScoreVector s = softmax_temp(curr_logits, theta);
    ScoreVector z;
    z.probs.resize(split.total());
    double new_mass = 0.0;
    for (std::size_t c = split.old_count; c < split.total(); ++c) {
        z.probs[c] = s.probs[c];
        new_mass += s.probs[c];
    }
    if (split.old_count > 0) {
        const ScoreVector q = softmax_temp(hist_logits, theta);
        const double scale = 1.0 - new_mass;
        for (std::size_t j = 0; j < split.old_count; ++j) z.probs[j] = q.probs[j] * scale;
    }
    return z;
}

ScoreVector plain_self_distill_target(const std::vector<double>& hist_logits, double theta,
                                      std::size_t current_head_dim) {
    if (hist_logits.size() != current_head_dim)
        throw DimensionError("plain self-distillation needs matching head dimensions");
    return softmax_temp(hist_logits, theta);
}

ObjectiveResult client_objective(const ModelParams& params, const ModelParams* old_params,
                                 const Batch& batch, const ClassSplit& split,
                                 const DistillConfig& cfg) {
    if (split.total() != params.output_dim())
        throw DimensionError("class split does not match model head");

    const bool distill = cfg.mode != DistillMode::kCeOnly && cfg.beta > 0.0;
    if (!distill) {
        LossSpec spec;
        spec.kind = LossSpec::Kind::kCrossEntropy;
        const LossAndGrads ce = backward(params, batch, spec);
        return {ce.loss, ce.grads};
    }
    if (old_params == nullptr)
        throw StateError("distillation mode requires a historical model snapshot");

    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    const Matrix curr_logits = forward(params, batch);
    const Matrix hist_logits = forward(*old_params, batch);

    double loss = 0.0;
    Matrix logit_grads(batch.size(), split.total());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::vector<double> curr(curr_logits.row(i), curr_logits.row(i) + curr_logits.cols);
        std::vector<double> hist(hist_logits.row(i), hist_logits.row(i) + hist_logits.cols);

        // CE term (untempered)
        const ScoreVector p = softmax_temp(curr, 1.0);
        loss += cross_entropy(p, batch.labels[i]) * inv_batch;
        std::vector<double> g(split.total());
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = p.probs[j] * inv_batch;
        g[static_cast<std::size_t>(batch.labels[i])] -= inv_batch;

        // KD term
        const ScoreVector s = softmax_temp(curr, cfg.theta);
        ScoreVector z;
        std::vector<double> q;
        if (cfg.mode == DistillMode::kFedclassAugmented) {
            z = augment_scores(hist, curr, split, cfg.theta);
            q = softmax_temp(hist, cfg.theta).probs;
        } else {
            z = plain_self_distill_target(hist, cfg.theta, split.total());
        }
        const double kd_weight =
            cfg.beta * (cfg.kd_theta_squared ? cfg.theta * cfg.theta : 1.0);
        ScoreVector z_floored = z;
        for (double& v : z_floored.probs) v = std::max(v, kProbFloor);
        const double kd = cfg.kl_direction == KlDirection::kTargetFirst
                              ? kl_divergence(z_floored, s)
                              : kl_divergence(s, z_floored);
        loss += kd_weight * kd * inv_batch;

        // The plain target never depends on the current model, so the
        // through-target path only exists in augmented mode.
        const bool through_target =
            cfg.mode == DistillMode::kFedclassAugmented && !cfg.detach_target;
        const std::vector<double> kd_grad =
            kd_logit_grad(z.probs, q, s, split, cfg, through_target);
        for (std::size_t j = 0; j < g.size(); ++j)
            g[j] += kd_weight * kd_grad[j] * inv_batch;
        std::copy(g.begin(), g.end(), logit_grads.row(i));
    }

    ParamGrads grads = backward_from_logit_grads(params, batch, logit_grads);
    return {loss, grads};
}

Matrix augmented_targets(const ModelParams& params, const ModelParams& old_params,
                         const Batch& batch, const ClassSplit& split, double theta) {
    const Matrix curr_logits = forward(params, batch);
    const Matrix hist_logits = forward(old_params, batch);
    Matrix targets(batch.size(), split.total());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::vector<double> curr(curr_logits.row(i), curr_logits.row(i) + curr_logits.cols);
        std::vector<double> hist(hist_logits.row(i), hist_logits.row(i) + hist_logits.cols);
        const ScoreVector z = augment_scores(hist, curr, split, theta);
        std::copy(z.probs.begin(), z.probs.end(), targets.row(i));
    }
    return targets;
}

ScoreVector theorem_oracle(const ScoreVector& hist_probs_old, const ScoreVector& curr_probs) {
    validate_distribution(hist_probs_old, "historical score vector");
    validate_distribution(curr_probs, "current score vector");
    const std::size_t g = hist_probs_old.size();
    const std::size_t total = curr_probs.size();
    if (total <= g) throw DimensionError("current scores must cover old and new classes");

    ScoreVector z;
    z.probs.resize(total);

    // p(new_u | S_old) = p(new_u | S_new): current-model scores fill the new slots.
    double p_new_total = 0.0;
    for (std::size_t u = g; u < total; ++u) {
        z.probs[u] = curr_probs.probs[u];
        p_new_total += curr_probs.probs[u];
    }

    // p(not-new | S_old) = 1 - p(C_new | S_old), with p(C_new | S_old)
    // approximated by the current state; old classes and new classes are
    // complementary, so p(old_u | S_old) = p(old_u | not-new, S_old) * p(not-new | S_old).
    const double p_not_new = 1.0 - p_new_total;
    for (std::size_t u = 0; u < g; ++u) z.probs[u] = hist_probs_old.probs[u] * p_not_new;
    return z;
}

}  // namespace fedclass
