#include "fedclass/incremental.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include "fedclass/rng.hpp"

namespace fedclass {

std::size_t TaskSchedule::classes_through(std::size_t task_index) const {
    std::size_t total = 0;
    for (std::size_t t = 0; t < task_index && t < tasks.size(); ++t) total += tasks[t].size();
    return total;
}

std::vector<int> TaskSchedule::class_order() const {
    std::vector<int> order;
    for (const auto& task : tasks) order.insert(order.end(), task.begin(), task.end());
    return order;
}

TaskSchedule build_schedule(int class_count, const std::vector<int>& split_sizes,
                            std::optional<std::uint64_t> permutation_seed) {
    if (split_sizes.empty()) throw ValidationError("task split list is empty");
    int total = 0;
    for (int s : split_sizes) {
        if (s < 1) throw ValidationError("every task split must be at least 1");
        total += s;
    }
    if (total != class_count)
        throw ValidationError("task splits sum to " + std::to_string(total) + ", expected " +
                              std::to_string(class_count));

    std::vector<int> classes(static_cast<std::size_t>(class_count));
    std::iota(classes.begin(), classes.end(), 0);
    if (permutation_seed) {
        auto gen = rng::engine(*permutation_seed, {rng::kTagSchedule});
        std::shuffle(classes.begin(), classes.end(), gen);
    }

    TaskSchedule schedule;
    std::size_t cursor = 0;
    for (int s : split_sizes) {
        schedule.tasks.emplace_back(classes.begin() + cursor, classes.begin() + cursor + s);
        cursor += static_cast<std::size_t>(s);
    }
    return schedule;
}

ModelParams extend_head(const ModelParams& params, std::size_t new_classes,
                        std::optional<std::uint64_t> init_seed) {
    if (new_classes < 1) throw ValidationError("head extension needs at least one new class");
    if (params.layers.empty()) throw DimensionError("model has no layers");
    ModelParams out = params;
    Layer& head = out.layers.back();
    const std::size_t in_dim = head.weights.cols;

    Matrix extended(head.weights.rows + new_classes, in_dim);
    std::copy(head.weights.data.begin(), head.weights.data.end(), extended.data.begin());
    head.biases.resize(head.biases.size() + new_classes, 0.0);
    if (init_seed) {
        auto gen = rng::engine(*init_seed, {rng::kTagInit});
        std::normal_distribution<double> dist(0.0, 0.01);
        for (std::size_t i = head.weights.data.size(); i < extended.data.size(); ++i)
            extended.data[i] = dist(gen);
    }
    head.weights = std::move(extended);
    return out;
}

ExemplarMemory update_memory(const std::vector<Sample>& pool, std::size_t capacity,
                             std::uint64_t seed) {
    ExemplarMemory mem;
    mem.capacity = capacity;
    if (capacity == 0 || pool.empty()) return mem;
    if (pool.size() <= capacity) {
        mem.samples = pool;
        return mem;
    }

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < pool.size(); ++i) by_class[pool[i].label].push_back(i);

    auto gen = rng::engine(seed, {rng::kTagMemory});
    std::map<int, std::vector<std::size_t>> shuffled;
    for (auto& [label, idxs] : by_class) {
        std::shuffle(idxs.begin(), idxs.end(), gen);
        shuffled[label] = idxs;
    }

    const std::size_t n_classes = by_class.size();
    std::map<int, std::size_t> take;
    std::size_t assigned = 0;
    for (const auto& [label, idxs] : shuffled) {
        take[label] = std::min(capacity / n_classes, idxs.size());
        assigned += take[label];
    }
    // Remainder round-robin over ascending class index until capacity or pool
    // is exhausted.
    bool progressed = true;
    while (assigned < capacity && progressed) {
        progressed = false;
        for (auto& [label, idxs] : shuffled) {
            if (assigned >= capacity) break;
            if (take[label] < idxs.size()) {
                ++take[label];
                ++assigned;
                progressed = true;
            }
        }
    }

    for (const auto& [label, idxs] : shuffled)
        for (std::size_t i = 0; i < take[label]; ++i) mem.samples.push_back(pool[idxs[i]]);
    return mem;
}

ModelParams snapshot_old(const ModelParams& params) { return params; }

}  // namespace fedclass
