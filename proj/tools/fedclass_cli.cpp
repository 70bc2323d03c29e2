#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "fedclass/federation.hpp"
#include "fedclass/rng.hpp"

namespace {

using namespace fedclass;

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 1;
constexpr int kExitRuntimeError = 2;
constexpr int kExitCheckFailure = 3;

int worker_cap() {
    if (const char* env = std::getenv("FEDCLASS_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

// Seeds are independent; run them on a small pool and keep reports in seed order.
std::vector<RunReport> run_seeds(const ExperimentConfig& cfg) {
    std::vector<RunReport> reports(cfg.seeds.size());
    const int workers = std::min<int>(worker_cap(), static_cast<int>(cfg.seeds.size()));
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::mutex failure_mutex;
    std::string failure;
    auto body = [&] {
        for (std::size_t i = next.fetch_add(1); i < cfg.seeds.size(); i = next.fetch_add(1)) {
            try {
                reports[i] = run_experiment(cfg, cfg.seeds[i]).report;
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (failure.empty()) failure = e.what();
            }
        }
    };
    for (int w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (!failure.empty()) throw std::runtime_error(failure);
    return reports;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
    std::size_t n = 0;
};

MeanStd mean_std(const std::vector<double>& values) {
    MeanStd out;
    out.n = values.size();
    if (values.empty()) return out;
    for (double v : values) out.mean += v;
    out.mean /= static_cast<double>(values.size());
    for (double v : values) out.std += (v - out.mean) * (v - out.mean);
    out.std = values.size() > 1 ? std::sqrt(out.std / static_cast<double>(values.size() - 1)) : 0.0;
    return out;
}

std::vector<double> collect(const std::vector<RunReport>& reports,
                            const std::function<std::optional<double>(const RunReport&)>& get) {
    std::vector<double> values;
    for (const auto& r : reports)
        if (auto v = get(r)) values.push_back(*v);
    return values;
}

void print_summary(const ExperimentConfig& cfg, const std::vector<RunReport>& reports) {
    const std::size_t tasks = cfg.task_splits.size();
    auto cell = [](const MeanStd& ms) {
        char buf[64];
        if (ms.n == 0) return std::string("-");
        std::snprintf(buf, sizeof(buf), "%6.2f +- %5.2f", ms.mean, ms.std);
        return std::string(buf);
    };
    std::printf("run: %s  mode=%s  seeds=%zu\n", cfg.run_name.c_str(), cfg.mode.c_str(),
                cfg.seeds.size());
    std::printf("%-22s %s\n", "metric", "mean +- std (%)");
    for (std::size_t t = 0; t < tasks; ++t) {
        auto ms = mean_std(collect(reports, [t](const RunReport& r) {
            return r.task_accuracy.empty() ? std::nullopt : r.task_accuracy.back()[t];
        }));
        std::printf("T%zu accuracy            %s\n", t + 1, cell(ms).c_str());
    }
    for (std::size_t t = 0; t + 1 < tasks; ++t) {
        auto ms = mean_std(collect(reports, [t](const RunReport& r) {
            return t < r.forgetting.size() ? r.forgetting[t] : std::nullopt;
        }));
        std::printf("T%zu forgetting rate     %s\n", t + 1, cell(ms).c_str());
    }
    auto g = mean_std(collect(reports, [](const RunReport& r) {
        return std::optional<double>(r.final_global_accuracy());
    }));
    auto f = mean_std(collect(reports, [](const RunReport& r) { return r.avg_forgetting; }));
    std::printf("global accuracy        %s\n", cell(g).c_str());
    std::printf("avg forgetting rate    %s\n", cell(f).c_str());
}

void write_reports(const ExperimentConfig& cfg, const std::vector<RunReport>& reports) {
    std::filesystem::create_directories(cfg.output_dir);
    for (const auto& report : reports) {
        const std::string base =
            cfg.output_dir + "/" + cfg.run_name + "_seed" + std::to_string(report.seed);
        write_report(report, base + ".json", ReportFormat::kJson);
        write_report(report, base + ".csv", ReportFormat::kCsv);
    }
}

void add_config_options(CLI::App& app, ExperimentConfig& cfg) {
    app.add_option("--dataset", cfg.dataset, "synthetic | idx");
    app.add_option("--classes", cfg.classes);
    app.add_option("--per-class", cfg.per_class);
    app.add_option("--feature-dim", cfg.feature_dim);
    app.add_option("--separation", cfg.separation);
    app.add_option("--idx-images", cfg.idx_images);
    app.add_option("--idx-labels", cfg.idx_labels);
    app.add_option("--idx-test-images", cfg.idx_test_images);
    app.add_option("--idx-test-labels", cfg.idx_test_labels);
    app.add_option("--clients", cfg.clients, "K participating clients");
    app.add_option("--alpha", cfg.alpha, "Dirichlet concentration");
    app.add_option("--task-splits", cfg.task_splits, "classes per task, e.g. 2 2")->delimiter(',');
    app.add_option("--memory-size", cfg.memory_size, "exemplar memory m");
    app.add_option("--beta", cfg.beta, "distillation weight");
    app.add_option("--theta", cfg.theta, "distillation temperature");
    app.add_option("--mode", cfg.mode, "fedclass_augmented | plain_self_distill | ce_only");
    app.add_option("--kl-direction", cfg.kl_direction, "target_first | student_first");
    app.add_option("--detach-target", cfg.detach_target);
    app.add_option("--kd-theta-squared", cfg.kd_theta_squared);
    app.add_option("--rounds-per-task", cfg.rounds_per_task);
    app.add_option("--local-epochs", cfg.local_epochs);
    app.add_option("--batch-size", cfg.batch_size);
    app.add_option("--lr", cfg.lr);
    app.add_option("--momentum", cfg.momentum);
    app.add_option("--weight-decay", cfg.weight_decay);
    app.add_option("--hidden-width", cfg.hidden_width);
    app.add_option("--seeds", cfg.seeds, "seed list, e.g. 1,2,3")->delimiter(',');
    app.add_option("--output-dir", cfg.output_dir);
    app.add_option("--run-name", cfg.run_name);
    app.add_flag("--eval-every-round", cfg.eval_every_round);
}

int validate_or_report(const ExperimentConfig& cfg) {
    const auto violations = cfg.validate();
    if (violations.empty()) return kExitOk;
    std::cerr << "invalid configuration:\n";
    for (const auto& v : violations) std::cerr << "  - " << v << '\n';
    return kExitConfigError;
}

int cmd_run(const ExperimentConfig& cfg) {
    if (int rc = validate_or_report(cfg)) return rc;
    const std::vector<RunReport> reports = run_seeds(cfg);
    write_reports(cfg, reports);
    print_summary(cfg, reports);
    return kExitOk;
}

std::string m_row_label(int m, int classes) {
    if (m > 0 && classes > 0 && m % classes == 0)
        return std::to_string(m / classes) + "|C^new u C^old|";
    return std::to_string(m);
}

int cmd_sweep(ExperimentConfig cfg, const std::string& param,
              const std::vector<double>& values) {
    if (values.empty()) {
        std::cerr << "sweep requires at least one value\n";
        return kExitConfigError;
    }
    if (param != "beta" && param != "m") {
        std::cerr << "sweepable params are 'beta' and 'm'\n";
        return kExitConfigError;
    }
    if (int rc = validate_or_report(cfg)) return rc;

    std::filesystem::create_directories(cfg.output_dir);
    const std::string path = cfg.output_dir + "/" + cfg.run_name + "_sweep_" + param + ".csv";
    std::ofstream out(path);
    if (!out) {
        std::cerr << "cannot open " << path << " for writing\n";
        return kExitRuntimeError;
    }
    out << "label," << param << ",global_accuracy,avg_forgetting,delta\n";
    std::printf("%-20s %16s %16s %10s\n", param.c_str(), "global acc", "avg forgetting", "delta");

    std::optional<double> reference;
    for (double value : values) {
        ExperimentConfig point = cfg;
        std::string label;
        if (param == "beta") {
            point.beta = value;
            label = std::to_string(value);
        } else {
            point.memory_size = static_cast<int>(value);
            label = m_row_label(point.memory_size, point.classes);
        }
        point.run_name = cfg.run_name + "_" + param + std::to_string(value);
        const std::vector<RunReport> reports = run_seeds(point);
        write_reports(point, reports);
        const MeanStd g = mean_std(collect(
            reports, [](const RunReport& r) { return std::optional<double>(r.final_global_accuracy()); }));
        const MeanStd f =
            mean_std(collect(reports, [](const RunReport& r) { return r.avg_forgetting; }));
        // Delta vs the first row: positive = forgetting went down (improvement).
        std::string delta = "-";
        if (reference) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.2f", *reference - f.mean);
            delta = buf;
        } else {
            reference = f.mean;
        }
        char gbuf[32], fbuf[32];
        std::snprintf(gbuf, sizeof(gbuf), "%.2f", g.mean);
        std::snprintf(fbuf, sizeof(fbuf), "%.2f", f.mean);
        out << label << ',' << value << ',' << gbuf << ',' << fbuf << ',' << delta << '\n';
        std::printf("%-20s %16s %16s %10s\n", label.c_str(), gbuf, fbuf, delta.c_str());
    }
    std::printf("wrote %s\n", path.c_str());
    return kExitOk;
}

bool check(const char* name, bool ok) {
    std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", name);
    return ok;
}

// Fast invariant/oracle suites: the same checks the acceptance tests pin down,
// runnable from a shipped binary.
int cmd_check() {
    bool all = true;
    {
        std::mt19937_64 gen(12345);
        std::uniform_int_distribution<int> dim(1, 10);
        std::uniform_real_distribution<double> logit(-8.0, 8.0);
        std::uniform_real_distribution<double> temp(0.5, 4.0);
        double worst = 0.0;
        for (int i = 0; i < 10000; ++i) {
            const ClassSplit split{static_cast<std::size_t>(dim(gen)),
                                   static_cast<std::size_t>(dim(gen))};
            std::vector<double> hist(split.old_count), curr(split.total());
            for (double& v : hist) v = logit(gen);
            for (double& v : curr) v = logit(gen);
            const double theta = temp(gen);
            const ScoreVector direct = augment_scores(hist, curr, split, theta);
            const ScoreVector oracle =
                theorem_oracle(softmax_temp(hist, theta), softmax_temp(curr, theta));
            for (std::size_t j = 0; j < direct.size(); ++j)
                worst = std::max(worst, std::abs(direct.probs[j] - oracle.probs[j]));
        }
        all &= check("theorem oracle == augmented scores (10000 cases, 1e-12)", worst < 1e-12);
    }
    {
        std::mt19937_64 gen(777);
        std::uniform_int_distribution<int> dim(1, 10);
        std::uniform_real_distribution<double> logit(-8.0, 8.0);
        bool ok = true;
        for (int i = 0; i < 1000 && ok; ++i) {
            const ClassSplit split{static_cast<std::size_t>(dim(gen)),
                                   static_cast<std::size_t>(dim(gen))};
            std::vector<double> hist(split.old_count), curr(split.total());
            for (double& v : hist) v = logit(gen);
            for (double& v : curr) v = logit(gen);
            const ScoreVector z = augment_scores(hist, curr, split, 2.0);
            double total = 0.0;
            for (double v : z.probs) {
                ok &= v >= 0.0 && v <= 1.0;
                total += v;
            }
            ok &= std::abs(total - 1.0) < 1e-9;
        }
        all &= check("augmented scores normalized and in [0,1] (1000 cases)", ok);
    }
    {
        const ModelParams params = make_mlp(4, 16, 5, 99);
        const ModelParams old_params = make_mlp(4, 16, 3, 98);
        std::mt19937_64 gen(4242);
        std::normal_distribution<double> noise(0.0, 1.0);
        Batch batch;
        batch.inputs = Matrix(8, 4);
        for (double& v : batch.inputs.data) v = noise(gen);
        for (std::size_t i = 0; i < 8; ++i) batch.labels.push_back(static_cast<int>(i % 5));
        DistillConfig cfg;
        const ClassSplit split{3, 2};

        // Detached (default) path: the target is a constant per step, so the
        // independent loss evaluation freezes z at the base parameters.
        LossSpec spec;
        spec.kind = LossSpec::Kind::kCrossEntropyPlusDistill;
        spec.beta = cfg.beta;
        spec.theta = cfg.theta;
        spec.targets = augmented_targets(params, old_params, batch, split, cfg.theta);
        const double err = finite_diff_check(params, batch, spec, 1e-5);
        all &= check("gradient check, detached augmented objective (<1e-4)", err < 1e-4);

        // Non-detached path: the finite difference runs through z as well.
        DistillConfig exact = cfg;
        exact.detach_target = false;
        const ObjectiveResult obj2 = client_objective(params, &old_params, batch, split, exact);
        const double err2 = finite_diff_check_fn(
            params, obj2.grads,
            [&](const ModelParams& p) {
                return client_objective(p, &old_params, batch, split, exact).loss;
            },
            1e-5);
        all &= check("gradient check, non-detached augmented objective (<1e-4)", err2 < 1e-4);
        const double ce_err =
            finite_diff_check(params, batch, LossSpec{LossSpec::Kind::kCrossEntropy}, 1e-5);
        all &= check("gradient check, cross-entropy (<1e-4)", ce_err < 1e-4);
    }
    {
        ModelParams a = make_mlp(3, 8, 4, 1);
        const ModelParams same = aggregate({a, a, a}, {2, 5, 9});
        bool ok = true;
        for (std::size_t l = 0; l < a.layers.size(); ++l)
            for (std::size_t i = 0; i < a.layers[l].weights.data.size(); ++i)
                ok &= std::abs(a.layers[l].weights.data[i] - same.layers[l].weights.data[i]) < 1e-15;
        ModelParams zero = zeros_like(a);
        ModelParams four = zeros_like(a);
        for (auto& layer : four.layers) {
            std::fill(layer.weights.data.begin(), layer.weights.data.end(), 4.0);
            std::fill(layer.biases.begin(), layer.biases.end(), 4.0);
        }
        const ModelParams mean = aggregate({zero, four}, {1, 3});
        for (const auto& layer : mean.layers)
            for (double v : layer.weights.data) ok &= v == 3.0;
        all &= check("aggregation identities", ok);
    }
    return all ? kExitOk : kExitCheckFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FedCLASS: federated class-incremental learning simulator"};
    app.require_subcommand(1);

    ExperimentConfig cfg;
    std::string config_path;

    // Config file first, flags override: the file is applied before CLI11
    // assigns any bound option, so explicitly given flags win.
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
    if (!config_path.empty()) {
        try {
            apply_config_file(cfg, config_path);
        } catch (const std::exception& e) {
            std::cerr << e.what() << '\n';
            return kExitConfigError;
        }
    }

    CLI::App* run = app.add_subcommand("run", "run the experiment for every seed");
    run->add_option("--config", config_path, "key=value config file");
    add_config_options(*run, cfg);

    CLI::App* sweep = app.add_subcommand("sweep", "run a beta or memory-size ablation matrix");
    sweep->add_option("--config", config_path, "key=value config file");
    std::string sweep_param;
    std::vector<double> sweep_values;
    sweep->add_option("--param", sweep_param, "beta | m")->required();
    sweep->add_option("--values", sweep_values, "comma-separated values")
        ->required()
        ->delimiter(',');
    add_config_options(*sweep, cfg);

    CLI::App* chk = app.add_subcommand("check", "run the invariant and oracle suites");
    (void)chk;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfigError;
    }

    try {
        if (run->parsed()) return cmd_run(cfg);
        if (sweep->parsed()) return cmd_sweep(cfg, sweep_param, sweep_values);
        return cmd_check();
    } catch (const ValidationError& e) {
        std::cerr << e.what() << '\n';
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << e.what() << '\n';
        return kExitRuntimeError;
    }
}
