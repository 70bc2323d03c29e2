#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fedclass/tensor_core.hpp"

namespace fedclass {

// Ordered incremental tasks over pairwise-disjoint class sets. Head slot j of
// the classifier corresponds to class_order()[j].
struct TaskSchedule {
    std::vector<std::vector<int>> tasks;  // class indices per task, in slot order

    std::size_t task_count() const { return tasks.size(); }
    std::size_t classes_through(std::size_t task_index) const;  // cumulative, 1-based
    std::vector<int> class_order() const;
};

struct Sample {
    std::vector<double> input;
    int label = 0;
};

struct ExemplarMemory {
    std::size_t capacity = 0;  // m
    std::vector<Sample> samples;
};

TaskSchedule build_schedule(int class_count, const std::vector<int>& split_sizes,
                            std::optional<std::uint64_t> permutation_seed = std::nullopt);

// Appends new zero-initialized rows (optionally Gaussian, std 0.01) to the
// output layer; existing rows are untouched.
ModelParams extend_head(const ModelParams& params, std::size_t new_classes,
                        std::optional<std::uint64_t> init_seed = std::nullopt);

// Class-balanced uniform subset of the given pool: floor(m / #classes) per
// seen class, remainder filled round-robin in ascending class index.
ExemplarMemory update_memory(const std::vector<Sample>& pool, std::size_t capacity,
                             std::uint64_t seed);

ModelParams snapshot_old(const ModelParams& params);

}  // namespace fedclass
