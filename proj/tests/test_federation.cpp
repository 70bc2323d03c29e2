#include <cmath>
#include <optional>
#include <vector>

#include "doctest.h"
#include "fedclass/errors.hpp"
#include "fedclass/federation.hpp"
#include "fedclass/rng.hpp"

using namespace fedclass;

namespace {

ModelParams scalar_model(double value) {
    ModelParams p;
    p.layers.push_back({Matrix(1, 1), std::vector<double>(1, value)});
    p.layers[0].weights.at(0, 0) = value;
    return p;
}

bool models_equal(const ModelParams& a, const ModelParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        if (a.layers[l].weights.data != b.layers[l].weights.data) return false;
        if (a.layers[l].biases != b.layers[l].biases) return false;
    }
    return true;
}

ClientState make_client(int id, const ModelParams& model, std::vector<Sample> shard,
                        double lr = 0.01) {
    ClientState cs;
    cs.id = id;
    cs.model = model;
    cs.task_shards.push_back(std::move(shard));
    cs.opt = OptimizerState::create(lr, 0.9, 1e-5, model);
    return cs;
}

std::vector<Sample> tiny_shard(std::size_t n, std::size_t features, int label_range,
                               std::uint64_t seed) {
    auto gen = rng::engine(seed, {rng::kTagData});
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_int_distribution<int> lab(0, label_range - 1);
    std::vector<Sample> out(n);
    for (Sample& s : out) {
        s.input.resize(features);
        for (double& v : s.input) v = noise(gen);
        s.label = lab(gen);
    }
    return out;
}

ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.classes = 4;
    cfg.per_class = 30;
    cfg.feature_dim = 2;
    cfg.separation = 4.0;
    cfg.clients = 2;
    cfg.task_splits = {2, 2};
    cfg.memory_size = 8;
    cfg.rounds_per_task = 2;
    cfg.hidden_width = 8;
    return cfg;
}

}  // namespace

TEST_CASE("aggregate: a single client's model passes through unchanged") {
    ModelParams m = make_mlp(2, 4, 3, /*seed=*/1);
    ModelParams out = aggregate({m}, {7});
    CHECK(models_equal(out, m));
}

TEST_CASE("aggregate: equal sizes average 0 and 4 to 2") {
    ModelParams out = aggregate({scalar_model(0.0), scalar_model(4.0)}, {5, 5});
    CHECK(out.layers[0].weights.at(0, 0) == 2.0);
    CHECK(out.layers[0].biases[0] == 2.0);
}

TEST_CASE("aggregate: sizes [1,3] weight 0 and 4 to 3") {
    ModelParams out = aggregate({scalar_model(0.0), scalar_model(4.0)}, {1, 3});
    CHECK(out.layers[0].weights.at(0, 0) == 3.0);
}

TEST_CASE("aggregate: identical models aggregate to themselves within 1e-15") {
    ModelParams m = make_mlp(3, 8, 4, /*seed=*/6);
    ModelParams out = aggregate({m, m, m}, {2, 9, 4});
    for (std::size_t l = 0; l < m.layers.size(); ++l)
        for (std::size_t i = 0; i < m.layers[l].weights.data.size(); ++i)
            CHECK(std::abs(out.layers[l].weights.data[i] - m.layers[l].weights.data[i]) <= 1e-15);
}

TEST_CASE("aggregate: validation failures") {
    ModelParams a = make_mlp(2, 4, 3, 1), b = make_mlp(2, 5, 3, 1);
    CHECK_THROWS_AS(aggregate({}, {}), ValidationError);
    CHECK_THROWS_AS(aggregate({a, b}, {1, 1}), DimensionError);
    CHECK_THROWS_AS(aggregate({a, a}, {1, 0}), ValidationError);
    CHECK_THROWS_AS(aggregate({a, a}, {1}), ValidationError);
}

TEST_CASE("client_round: zero learning rate returns the downloaded global model") {
    ModelParams global = make_mlp(2, 4, 2, /*seed=*/4);
    ClientState cs = make_client(0, make_mlp(2, 4, 2, /*seed=*/5), tiny_shard(6, 2, 2, 1));
    cs.opt.lr = 0.0;  // the factory forbids lr=0 for real runs; force it here
    DistillConfig cfg;
    cfg.mode = DistillMode::kCeOnly;
    ClientRoundResult res =
        client_round(cs, global, RoundPlan{1, 1, 32}, cfg, ClassSplit{0, 2}, 9, 0, 0);
    CHECK(res.weight == 6);
    CHECK(models_equal(cs.model, global));
}

TEST_CASE("client_round: one sample, one epoch matches a scripted single-step trace") {
    ModelParams global = make_mlp(2, 4, 2, /*seed=*/14);
    std::vector<Sample> shard = tiny_shard(1, 2, 2, 3);
    ClientState cs = make_client(0, make_mlp(2, 4, 2, /*seed=*/15), shard, 0.05);
    DistillConfig cfg;
    cfg.mode = DistillMode::kCeOnly;
    ClientRoundResult res =
        client_round(cs, global, RoundPlan{1, 1, 32}, cfg, ClassSplit{0, 2}, 11, 0, 0);

    // Scripted trace: download, one CE step on the single-sample batch.
    ModelParams expected = global;
    OptimizerState opt = OptimizerState::create(0.05, 0.9, 1e-5, expected);
    Batch batch;
    batch.inputs = Matrix(1, 2);
    batch.inputs.at(0, 0) = shard[0].input[0];
    batch.inputs.at(0, 1) = shard[0].input[1];
    batch.labels = {shard[0].label};
    ObjectiveResult obj = client_objective(expected, nullptr, batch, ClassSplit{0, 2}, cfg);
    sgd_step(expected, obj.grads, opt);

    CHECK(models_equal(cs.model, expected));
    CHECK(res.mean_loss == doctest::Approx(obj.loss).epsilon(1e-12));
}

TEST_CASE("client_round: the first task always trains pure cross-entropy") {
    ModelParams global = make_mlp(2, 4, 2, /*seed=*/24);
    ClientState cs = make_client(1, global, tiny_shard(5, 2, 2, 8));
    DistillConfig cfg;  // augmented mode requested, but task 1 must ignore it
    ClientRoundResult res =
        client_round(cs, global, RoundPlan{1, 1, 32}, cfg, ClassSplit{0, 2}, 21, 0, 0);
    CHECK(res.objective == "ce_only");
    CHECK(res.weight == 5);
}

TEST_CASE("client_round: later tasks report the configured objective") {
    ModelParams global = make_mlp(2, 4, 4, /*seed=*/24);
    ClientState cs = make_client(1, global, tiny_shard(4, 2, 2, 8));
    cs.task_shards.push_back(tiny_shard(5, 2, 4, 9));
    cs.old_model = make_mlp(2, 4, 2, /*seed=*/23);
    DistillConfig cfg;
    ClientRoundResult res =
        client_round(cs, global, RoundPlan{1, 1, 32}, cfg, ClassSplit{2, 2}, 21, 1, 0);
    CHECK(res.objective == "fedclass_augmented");
}

TEST_CASE("client_round: an empty training pool skips the client with weight 0") {
    ModelParams global = make_mlp(2, 4, 2, /*seed=*/4);
    ClientState cs = make_client(2, global, {});
    DistillConfig cfg;
    cfg.mode = DistillMode::kCeOnly;
    ClientRoundResult res =
        client_round(cs, global, RoundPlan{1, 1, 32}, cfg, ClassSplit{0, 2}, 2, 0, 0);
    CHECK(res.weight == 0);
}

TEST_CASE("client_round: identical inputs replay the identical round") {
    ModelParams global = make_mlp(2, 6, 2, /*seed=*/7);
    std::vector<Sample> shard = tiny_shard(40, 2, 2, 12);
    DistillConfig cfg;
    cfg.mode = DistillMode::kCeOnly;

    ClientState a = make_client(0, global, shard);
    ClientState b = make_client(0, global, shard);
    client_round(a, global, RoundPlan{1, 2, 8}, cfg, ClassSplit{0, 2}, 33, 0, 4);
    client_round(b, global, RoundPlan{1, 2, 8}, cfg, ClassSplit{0, 2}, 33, 0, 4);
    CHECK(models_equal(a.model, b.model));

    // A different round index draws a different batch order.
    ClientState c = make_client(0, global, shard);
    client_round(c, global, RoundPlan{1, 2, 8}, cfg, ClassSplit{0, 2}, 33, 0, 5);
    CHECK(!models_equal(a.model, c.model));
}

TEST_CASE("task_transition: dimension bookkeeping, memory bound, snapshot isolation") {
    ModelParams model = make_mlp(2, 4, 2, /*seed=*/10);
    ClientState cs = make_client(0, model, tiny_shard(30, 2, 2, 5));
    task_transition(cs, /*finished_task=*/0, /*new_classes=*/2, /*memory_capacity=*/6, 77);

    REQUIRE(cs.old_model);
    CHECK(cs.old_model->output_dim() == 2);
    CHECK(cs.model.output_dim() == 4);
    CHECK(cs.memory.samples.size() <= 6);
    for (const Sample& s : cs.memory.samples) CHECK(s.label < 2);

    // Velocity was re-shaped and zeroed for the extended head.
    CHECK(cs.opt.velocity.same_shape(cs.model));
    for (const Layer& l : cs.opt.velocity.layers)
        for (double v : l.weights.data) CHECK(v == 0.0);

    // Further training must not leak into the snapshot.
    ModelParams snapshot_before = *cs.old_model;
    ParamGrads g = zeros_like(cs.model);
    for (double& v : g.layers[0].weights.data) v = 1.0;
    sgd_step(cs.model, g, cs.opt);
    CHECK(models_equal(*cs.old_model, snapshot_before));
}

TEST_CASE("run_experiment: zero rounds per task evaluates the untrained pipeline") {
    ExperimentConfig cfg = tiny_config();
    cfg.rounds_per_task = 0;
    ExperimentResult res = run_experiment(cfg, 1);
    REQUIRE(res.report.task_accuracy.size() == 2);  // one eval point per task
    CHECK(res.report.global_accuracy.size() == 2);
    CHECK(res.final_model.output_dim() == 4);
}

TEST_CASE("run_experiment: identical config and seed reproduce bit-identical reports") {
    ExperimentConfig cfg = tiny_config();
    ExperimentResult a = run_experiment(cfg, 3);
    ExperimentResult b = run_experiment(cfg, 3);
    CHECK(a.report.task_accuracy == b.report.task_accuracy);
    CHECK(a.report.global_accuracy == b.report.global_accuracy);
    CHECK(a.report.forgetting == b.report.forgetting);
    CHECK(models_equal(a.final_model, b.final_model));
}

TEST_CASE("run_experiment: data and partition are independent of the loss mode") {
    // With zero training rounds the report depends only on data, partition,
    // and initialization, so two modes must produce the same numbers.
    ExperimentConfig ce = tiny_config();
    ce.rounds_per_task = 0;
    ce.mode = "ce_only";
    ExperimentConfig aug = ce;
    aug.mode = "fedclass_augmented";
    ExperimentResult a = run_experiment(ce, 5);
    ExperimentResult b = run_experiment(aug, 5);
    CHECK(a.report.task_accuracy == b.report.task_accuracy);
    CHECK(a.report.global_accuracy == b.report.global_accuracy);
    CHECK(models_equal(a.final_model, b.final_model));
}

TEST_CASE("run_experiment: invalid configs fail before any training") {
    ExperimentConfig cfg = tiny_config();
    cfg.task_splits = {2, 3};  // does not sum to the class count
    CHECK_THROWS_AS(run_experiment(cfg, 1), ValidationError);

    ExperimentConfig bad_lr = tiny_config();
    bad_lr.lr = 0.0;
    CHECK_THROWS_AS(run_experiment(bad_lr, 1), ValidationError);

    ExperimentConfig bad_idx = tiny_config();
    bad_idx.dataset = "idx";  // paths missing
    CHECK_THROWS_AS(run_experiment(bad_idx, 1), ValidationError);
}

TEST_CASE("run_experiment: accuracy history has the incremental staircase shape") {
    ExperimentConfig cfg = tiny_config();
    ExperimentResult res = run_experiment(cfg, 2);
    REQUIRE(res.report.task_accuracy.size() == 2);
    CHECK(res.report.task_accuracy[0].size() == 2);
    CHECK(res.report.task_accuracy[0][1] == std::nullopt);  // task 2 not introduced yet
    CHECK(res.report.task_accuracy[1].size() == 2);
    REQUIRE(res.report.task_accuracy[1][0]);
    REQUIRE(res.report.task_accuracy[1][1]);
    REQUIRE(res.report.forgetting.size() == 2);
    CHECK(res.report.forgetting[1] == std::nullopt);  // final task, one evaluation
    for (double g : res.report.global_accuracy) {
        CHECK(g >= 0.0);
        CHECK(g <= 100.0);
    }
}
