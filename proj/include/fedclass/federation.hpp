#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedclass/config.hpp"
#include "fedclass/data.hpp"
#include "fedclass/distillation.hpp"
#include "fedclass/incremental.hpp"
#include "fedclass/metrics.hpp"

namespace fedclass {

struct RoundPlan {
    int rounds_per_task = 20;
    int local_epochs = 1;
    int batch_size = 32;
};

struct ClientState {
    int id = 0;
    ModelParams model;
    std::optional<ModelParams> old_model;         // present from task 2 onward
    std::vector<std::vector<Sample>> task_shards; // labels already in head-slot space
    ExemplarMemory memory;
    OptimizerState opt;
};

struct ClientRoundResult {
    std::size_t weight = 0;  // |D^k_t|; 0 means the client was skipped
    double mean_loss = 0.0;
    std::string objective;   // which loss path actually ran, for instrumentation
};

// Parameterwise weighted mean, weights sizes[k] / sum(sizes).
ModelParams aggregate(const std::vector<ModelParams>& models,
                      const std::vector<std::size_t>& sizes);

// One synchronous round on one client: download the global model, run
// local_epochs of minibatch SGD over memory + current shard. Task 1 trains
// pure CE; later tasks the configured objective. Batch order is drawn from
// (master_seed, client id, task, round, epoch) so rounds are reproducible
// and clients independent.
ClientRoundResult client_round(ClientState& cs, const ModelParams& global, const RoundPlan& plan,
                               const DistillConfig& cfg, const ClassSplit& split,
                               std::uint64_t master_seed, std::size_t task_index,
                               std::size_t round_index);

// Task boundary per the client algorithm: rebuild memory from the previous
// memory plus the finished task's shard, snapshot the model (head stays at g
// classes), then extend the live head by new_classes zero-init rows.
void task_transition(ClientState& cs, std::size_t finished_task, std::size_t new_classes,
                     std::size_t memory_capacity, std::uint64_t seed);

struct ExperimentResult {
    RunReport report;
    ModelParams final_model;
};

ExperimentResult run_experiment(const ExperimentConfig& config, std::uint64_t seed);

}  // namespace fedclass
