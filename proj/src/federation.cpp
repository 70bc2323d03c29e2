#include "fedclass/federation.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>
#include <set>

#include "fedclass/rng.hpp"

namespace fedclass {
namespace {

Batch make_batch(const std::vector<Sample>& pool, const std::vector<std::size_t>& idxs,
                 std::size_t begin, std::size_t end, std::size_t features) {
    Batch batch;
    batch.inputs = Matrix(end - begin, features);
    batch.labels.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        const Sample& s = pool[idxs[i]];
        std::copy(s.input.begin(), s.input.end(), batch.inputs.row(i - begin));
        batch.labels.push_back(s.label);
    }
    return batch;
}

}  // namespace

ModelParams aggregate(const std::vector<ModelParams>& models,
                      const std::vector<std::size_t>& sizes) {
    if (models.empty()) throw ValidationError("aggregate called with no models");
    if (models.size() != sizes.size())
        throw ValidationError("aggregate needs one size per model");
    std::size_t total = 0;
    for (std::size_t s : sizes) {
        if (s == 0) throw ValidationError("aggregation sizes must be positive");
        total += s;
    }
    for (const ModelParams& m : models)
        if (!m.same_shape(models.front())) throw DimensionError("aggregate shape mismatch");

    ModelParams out = zeros_like(models.front());
    for (std::size_t k = 0; k < models.size(); ++k) {
        const double w = static_cast<double>(sizes[k]) / static_cast<double>(total);
        for (std::size_t l = 0; l < out.layers.size(); ++l) {
            const Layer& src = models[k].layers[l];
            Layer& dst = out.layers[l];
            for (std::size_t i = 0; i < src.weights.data.size(); ++i)
                dst.weights.data[i] += w * src.weights.data[i];
            for (std::size_t i = 0; i < src.biases.size(); ++i)
                dst.biases[i] += w * src.biases[i];
        }
    }
    return out;
}

ClientRoundResult client_round(ClientState& cs, const ModelParams& global, const RoundPlan& plan,
                               const DistillConfig& cfg, const ClassSplit& split,
                               std::uint64_t master_seed, std::size_t task_index,
                               std::size_t round_index) {
    if (!cs.model.same_shape(global)) throw DimensionError("broadcast model shape mismatch");
    cs.model = global;

    std::vector<Sample> pool = cs.memory.samples;
    const std::vector<Sample>& shard = cs.task_shards[task_index];
    pool.insert(pool.end(), shard.begin(), shard.end());
    if (pool.empty()) {
        std::cerr << "warning: client " << cs.id << " has no data for task " << (task_index + 1)
                  << ", skipping round\n";
        return {0, 0.0, "skipped"};
    }

    DistillConfig effective = cfg;
    if (task_index == 0) effective.mode = DistillMode::kCeOnly;  // first task is pure CE
    const ModelParams* old_params = cs.old_model ? &*cs.old_model : nullptr;

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    const std::size_t features = cs.model.input_dim();
    std::vector<std::size_t> idxs(pool.size());
    for (int epoch = 0; epoch < plan.local_epochs; ++epoch) {
        std::iota(idxs.begin(), idxs.end(), 0);
        auto gen = rng::engine(master_seed,
                               {rng::kTagBatch, static_cast<std::uint64_t>(cs.id), task_index,
                                round_index, static_cast<std::uint64_t>(epoch)});
        std::shuffle(idxs.begin(), idxs.end(), gen);
        for (std::size_t begin = 0; begin < idxs.size();
             begin += static_cast<std::size_t>(plan.batch_size)) {
            const std::size_t end =
                std::min(idxs.size(), begin + static_cast<std::size_t>(plan.batch_size));
            const Batch batch = make_batch(pool, idxs, begin, end, features);
            const ObjectiveResult obj =
                client_objective(cs.model, old_params, batch, split, effective);
            sgd_step(cs.model, obj.grads, cs.opt);
            loss_sum += obj.loss;
            ++loss_count;
        }
    }

    ClientRoundResult result;
    result.weight = shard.size();
    result.mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    result.objective = effective.mode == DistillMode::kCeOnly          ? "ce_only"
                       : effective.mode == DistillMode::kPlainSelfDistill ? "plain_self_distill"
                                                                          : "fedclass_augmented";
    if (result.weight == 0) {
        // memory-only pool still trains, but carries no aggregation weight
        std::cerr << "warning: client " << cs.id << " holds no task-" << (task_index + 1)
                  << " samples; aggregation weight 0\n";
    }
    return result;
}

void task_transition(ClientState& cs, std::size_t finished_task, std::size_t new_classes,
                     std::size_t memory_capacity, std::uint64_t seed) {
    std::vector<Sample> pool = cs.memory.samples;
    const std::vector<Sample>& shard = cs.task_shards[finished_task];
    pool.insert(pool.end(), shard.begin(), shard.end());
    cs.memory = update_memory(pool, memory_capacity,
                              rng::derive(seed, {static_cast<std::uint64_t>(cs.id), finished_task}));
    cs.old_model = snapshot_old(cs.model);
    cs.model = extend_head(cs.model, new_classes);
    // velocity must track the new head shape; reset at the boundary
    cs.opt.velocity = zeros_like(cs.model);
}

ExperimentResult run_experiment(const ExperimentConfig& config, std::uint64_t seed) {
    const std::vector<std::string> violations = config.validate();
    if (!violations.empty()) {
        std::string all;
        for (const auto& v : violations) all += v + "; ";
        throw ValidationError("invalid config: " + all);
    }

    // Data. The partition stream depends only on the seed, never on the mode.
    Dataset train, test;
    if (config.dataset == "synthetic") {
        TrainTestSplit split = generate_synthetic(config.classes, config.per_class,
                                                  config.feature_dim, config.separation, seed);
        train = std::move(split.train);
        test = std::move(split.test);
    } else {
        train = load_idx(config.idx_images, config.idx_labels);
        test = load_idx(config.idx_test_images, config.idx_test_labels);
    }

    const TaskSchedule schedule = build_schedule(train.class_count, config.task_splits);
    const std::vector<int> order = schedule.class_order();
    std::vector<int> slot_of(order.size());
    for (std::size_t s = 0; s < order.size(); ++s) slot_of[static_cast<std::size_t>(order[s])] = s;
    for (int& l : train.labels) l = slot_of[static_cast<std::size_t>(l)];
    for (int& l : test.labels) l = slot_of[static_cast<std::size_t>(l)];

    PartitionSpec pspec;
    pspec.clients = config.clients;
    pspec.alpha = config.alpha;
    pspec.seed = seed;
    const std::vector<Dataset> shards = dirichlet_partition(train, pspec);

    const std::size_t task_count = schedule.task_count();
    const RoundPlan plan{config.rounds_per_task, config.local_epochs, config.batch_size};
    const DistillConfig dcfg = config.distill_config();

    // Shared seeded initialization, broadcast before round 1.
    ModelParams global = make_mlp(train.inputs.cols, static_cast<std::size_t>(config.hidden_width),
                                  schedule.tasks[0].size(), seed);

    std::vector<ClientState> clients(static_cast<std::size_t>(config.clients));
    for (int k = 0; k < config.clients; ++k) {
        ClientState& cs = clients[static_cast<std::size_t>(k)];
        cs.id = k;
        cs.model = global;
        cs.opt = OptimizerState::create(config.lr, config.momentum, config.weight_decay, global);
        cs.task_shards.assign(task_count, {});
        const Dataset& shard = shards[static_cast<std::size_t>(k)];
        for (std::size_t i = 0; i < shard.size(); ++i) {
            const int slot = shard.labels[i];
            std::size_t t = 0;
            for (std::size_t cum = 0; t < task_count; ++t) {
                cum += schedule.tasks[t].size();
                if (static_cast<std::size_t>(slot) < cum) break;
            }
            Sample s;
            s.input.assign(shard.inputs.row(i), shard.inputs.row(i) + shard.inputs.cols);
            s.label = slot;
            cs.task_shards[t].push_back(std::move(s));
        }
    }

    RunReport report;
    report.seed = seed;
    report.config_echo = config.echo();

    for (std::size_t t = 0; t < task_count; ++t) {
        if (t > 0) {
            const std::size_t new_classes = schedule.tasks[t].size();
            for (ClientState& cs : clients)
                task_transition(cs, t - 1, new_classes,
                                static_cast<std::size_t>(config.memory_size), seed);
            // server head grows the same deterministic way
            global = extend_head(global, new_classes);
        }
        const ClassSplit split{schedule.classes_through(t),
                               schedule.tasks[t].size()};

        for (int r = 0; r < plan.rounds_per_task; ++r) {
            std::vector<ModelParams> uploads;
            std::vector<std::size_t> weights;
            for (ClientState& cs : clients) {  // ascending id: deterministic fp order
                const ClientRoundResult res = client_round(cs, global, plan, dcfg, split, seed, t,
                                                           static_cast<std::size_t>(r));
                if (res.weight > 0) {
                    uploads.push_back(cs.model);
                    weights.push_back(res.weight);
                }
            }
            if (!uploads.empty()) global = aggregate(uploads, weights);
            if (config.eval_every_round) {
                if (auto acc = global_accuracy(global, test))
                    report.global_accuracy.push_back(*acc);
            }
        }

        // Evaluation point after the task completes.
        std::vector<std::optional<double>> row(task_count, std::nullopt);
        for (std::size_t j = 0; j <= t; ++j) {
            std::set<int> task_slots;
            const std::size_t base = schedule.classes_through(j);
            for (std::size_t c = 0; c < schedule.tasks[j].size(); ++c)
                task_slots.insert(static_cast<int>(base + c));
            row[j] = task_accuracy(global, test, task_slots);
        }
        report.task_accuracy.push_back(std::move(row));
        if (!config.eval_every_round) {
            if (auto acc = global_accuracy(global, test)) report.global_accuracy.push_back(*acc);
        }
    }

    finalize_forgetting(report);
    return {std::move(report), std::move(global)};
}

}  // namespace fedclass
