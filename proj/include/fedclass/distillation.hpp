#pragma once

#include "fedclass/tensor_core.hpp"

namespace fedclass {

// Old/new class bookkeeping for the current incremental task. Old classes
// occupy head slots [0, g), new classes [g, g+h).
struct ClassSplit {
    std::size_t old_count = 0;  // g
    std::size_t new_count = 0;  // h

    std::size_t total() const { return old_count + new_count; }
};

enum class DistillMode { kFedclassAugmented, kPlainSelfDistill, kCeOnly };

struct DistillConfig {
    double beta = 5.0;
    double theta = 2.0;
    DistillMode mode = DistillMode::kFedclassAugmented;
    KlDirection kl_direction = KlDirection::kTargetFirst;
    bool detach_target = true;
    bool kd_theta_squared = false;
};

// New-class augmented soft label: tempered current-model scores fill the new
// classes; the historical model's old-class scores are rescaled by the mass
// the current model leaves outside the new classes, so the result is a
// distribution.
ScoreVector augment_scores(const std::vector<double>& hist_logits,
                           const std::vector<double>& curr_logits, const ClassSplit& split,
                           double theta);

// Tempered softmax of the historical logits, used as the KD target of the
// plain (non-augmented) self-distillation baseline. Head dimensions must
// already agree.
ScoreVector plain_self_distill_target(const std::vector<double>& hist_logits, double theta,
                                      std::size_t current_head_dim);

struct ObjectiveResult {
    double loss = 0.0;
    ParamGrads grads;
};

// Batch-mean CE + beta * KD objective with per-sample augmented targets.
// old_params may be null only in CE-only mode (or beta == 0).
ObjectiveResult client_objective(const ModelParams& params, const ModelParams* old_params,
                                 const Batch& batch, const ClassSplit& split,
                                 const DistillConfig& cfg);

// Per-sample augmented targets as matrix rows. With detach_target these are
// exactly the constants the objective distills against, so a frozen copy can
// drive an independent loss evaluation.
Matrix augmented_targets(const ModelParams& params, const ModelParams& old_params,
                         const Batch& batch, const ClassSplit& split, double theta);

// Reassembles the augmented score via the conditional-probability laws rather
// than the closed-form formula: an independent route used to machine-check
// that both constructions agree.
ScoreVector theorem_oracle(const ScoreVector& hist_probs_old, const ScoreVector& curr_probs);

}  // namespace fedclass
