#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedclass/distillation.hpp"

namespace fedclass {

struct ExperimentConfig {
    // dataset: synthetic blobs or IDX file pairs
    std::string dataset = "synthetic";
    int classes = 4;
    int per_class = 100;
    int feature_dim = 2;
    double separation = 10.0;
    std::string idx_images;
    std::string idx_labels;
    std::string idx_test_images;
    std::string idx_test_labels;

    int clients = 5;       // K
    double alpha = 0.5;    // Dirichlet concentration
    std::vector<int> task_splits = {2, 2};
    int memory_size = 20;  // m

    double beta = 5.0;
    double theta = 2.0;
    std::string mode = "fedclass_augmented";  // | plain_self_distill | ce_only
    std::string kl_direction = "target_first";
    bool detach_target = true;
    bool kd_theta_squared = false;

    int rounds_per_task = 20;
    int local_epochs = 1;
    int batch_size = 32;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-5;
    int hidden_width = 64;

    std::vector<std::uint64_t> seeds = {1};
    std::string output_dir = ".";
    std::string run_name = "fedclass";
    bool eval_every_round = false;

    DistillMode distill_mode() const;
    KlDirection kl_dir() const;
    DistillConfig distill_config() const;

    // Every violation, not just the first; empty means valid.
    std::vector<std::string> validate() const;

    // Flat echo, sufficient to reconstruct the config exactly.
    std::map<std::string, std::string> echo() const;
};

// key=value text file; '#' starts a comment. Unknown keys are an error.
void apply_config_file(ExperimentConfig& cfg, const std::string& path);
void apply_key_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

}  // namespace fedclass
