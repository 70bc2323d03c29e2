#include "fedclass/config.hpp"

#include <fstream>
#include <sstream>

#include "fedclass/errors.hpp"

namespace fedclass {
namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

template <typename T>
std::string join(const std::vector<T>& values) {
    std::ostringstream out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out << ',';
        out << values[i];
    }
    return out.str();
}

template <typename T>
std::vector<T> split_list(const std::string& value) {
    std::vector<T> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        std::stringstream conv(item);
        T v;
        conv >> v;
        if (conv.fail()) throw ValidationError("cannot parse list item: " + item);
        out.push_back(v);
    }
    return out;
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ValidationError("cannot parse boolean: " + v);
}

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

}  // namespace

DistillMode ExperimentConfig::distill_mode() const {
    if (mode == "fedclass_augmented") return DistillMode::kFedclassAugmented;
    if (mode == "plain_self_distill") return DistillMode::kPlainSelfDistill;
    if (mode == "ce_only") return DistillMode::kCeOnly;
    throw ValidationError("unknown mode: " + mode);
}

KlDirection ExperimentConfig::kl_dir() const {
    if (kl_direction == "target_first") return KlDirection::kTargetFirst;
    if (kl_direction == "student_first") return KlDirection::kStudentFirst;
    throw ValidationError("unknown kl_direction: " + kl_direction);
}

DistillConfig ExperimentConfig::distill_config() const {
    DistillConfig cfg;
    cfg.beta = beta;
    cfg.theta = theta;
    cfg.mode = distill_mode();
    cfg.kl_direction = kl_dir();
    cfg.detach_target = detach_target;
    cfg.kd_theta_squared = kd_theta_squared;
    return cfg;
}

std::vector<std::string> ExperimentConfig::validate() const {
    std::vector<std::string> errors;
    auto require = [&](bool ok, const std::string& msg) {
        if (!ok) errors.push_back(msg);
    };

    require(dataset == "synthetic" || dataset == "idx", "dataset must be 'synthetic' or 'idx'");
    if (dataset == "synthetic") {
        require(classes >= 2, "classes must be >= 2");
        require(per_class >= 1, "per_class must be >= 1");
        require(feature_dim >= 1, "feature_dim must be >= 1");
        require(separation > 0.0, "separation must be positive");
    } else if (dataset == "idx") {
        for (const auto& [name, path] :
             {std::pair<const char*, const std::string&>{"idx_images", idx_images},
              {"idx_labels", idx_labels},
              {"idx_test_images", idx_test_images},
              {"idx_test_labels", idx_test_labels}}) {
            if (path.empty())
                errors.push_back(std::string(name) + " is required for dataset=idx");
            else if (!std::ifstream(path).good())
                errors.push_back(std::string(name) + " does not exist: " + path);
        }
    }

    require(clients >= 1, "clients must be >= 1");
    require(alpha > 0.0, "alpha must be positive");
    require(!task_splits.empty(), "task_splits must not be empty");
    for (int s : task_splits) require(s >= 1, "every task split must be >= 1");
    if (dataset == "synthetic") {
        int total = 0;
        for (int s : task_splits) total += s;
        require(total == classes, "task_splits must sum to classes");
    }
    require(memory_size >= 0, "memory_size must be >= 0");
    require(beta >= 0.0, "beta must be >= 0");
    require(theta > 0.0, "theta must be positive");
    try {
        distill_mode();
    } catch (const ValidationError& e) {
        errors.push_back(e.what());
    }
    try {
        kl_dir();
    } catch (const ValidationError& e) {
        errors.push_back(e.what());
    }
    require(rounds_per_task >= 0, "rounds_per_task must be >= 0");
    require(local_epochs >= 1, "local_epochs must be >= 1");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(lr > 0.0, "lr must be positive");
    require(momentum >= 0.0, "momentum must be >= 0");
    require(weight_decay >= 0.0, "weight_decay must be >= 0");
    require(hidden_width >= 0, "hidden_width must be >= 0");
    require(!seeds.empty(), "seeds must not be empty");
    return errors;
}

std::map<std::string, std::string> ExperimentConfig::echo() const {
    std::map<std::string, std::string> m;
    m["dataset"] = dataset;
    m["classes"] = std::to_string(classes);
    m["per_class"] = std::to_string(per_class);
    m["feature_dim"] = std::to_string(feature_dim);
    m["separation"] = fmt(separation);
    m["idx_images"] = idx_images;
    m["idx_labels"] = idx_labels;
    m["idx_test_images"] = idx_test_images;
    m["idx_test_labels"] = idx_test_labels;
    m["clients"] = std::to_string(clients);
    m["alpha"] = fmt(alpha);
    m["task_splits"] = join(task_splits);
    m["memory_size"] = std::to_string(memory_size);
    m["beta"] = fmt(beta);
    m["theta"] = fmt(theta);
    m["mode"] = mode;
    m["kl_direction"] = kl_direction;
    m["detach_target"] = detach_target ? "true" : "false";
    m["kd_theta_squared"] = kd_theta_squared ? "true" : "false";
    m["rounds_per_task"] = std::to_string(rounds_per_task);
    m["local_epochs"] = std::to_string(local_epochs);
    m["batch_size"] = std::to_string(batch_size);
    m["lr"] = fmt(lr);
    m["momentum"] = fmt(momentum);
    m["weight_decay"] = fmt(weight_decay);
    m["hidden_width"] = std::to_string(hidden_width);
    m["seeds"] = join(seeds);
    m["output_dir"] = output_dir;
    m["run_name"] = run_name;
    m["eval_every_round"] = eval_every_round ? "true" : "false";
    return m;
}

void apply_key_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "dataset") cfg.dataset = value;
    else if (key == "classes") cfg.classes = std::stoi(value);
    else if (key == "per_class") cfg.per_class = std::stoi(value);
    else if (key == "feature_dim") cfg.feature_dim = std::stoi(value);
    else if (key == "separation") cfg.separation = std::stod(value);
    else if (key == "idx_images") cfg.idx_images = value;
    else if (key == "idx_labels") cfg.idx_labels = value;
    else if (key == "idx_test_images") cfg.idx_test_images = value;
    else if (key == "idx_test_labels") cfg.idx_test_labels = value;
    else if (key == "clients") cfg.clients = std::stoi(value);
    else if (key == "alpha") cfg.alpha = std::stod(value);
    else if (key == "task_splits") cfg.task_splits = split_list<int>(value);
    else if (key == "memory_size") cfg.memory_size = std::stoi(value);
    else if (key == "beta") cfg.beta = std::stod(value);
    else if (key == "theta") cfg.theta = std::stod(value);
    else if (key == "mode") cfg.mode = value;
    else if (key == "kl_direction") cfg.kl_direction = value;
    else if (key == "detach_target") cfg.detach_target = parse_bool(value);
    else if (key == "kd_theta_squared") cfg.kd_theta_squared = parse_bool(value);
    else if (key == "rounds_per_task") cfg.rounds_per_task = std::stoi(value);
    else if (key == "local_epochs") cfg.local_epochs = std::stoi(value);
    else if (key == "batch_size") cfg.batch_size = std::stoi(value);
    else if (key == "lr") cfg.lr = std::stod(value);
    else if (key == "momentum") cfg.momentum = std::stod(value);
    else if (key == "weight_decay") cfg.weight_decay = std::stod(value);
    else if (key == "hidden_width") cfg.hidden_width = std::stoi(value);
    else if (key == "seeds") cfg.seeds = split_list<std::uint64_t>(value);
    else if (key == "output_dir") cfg.output_dir = value;
    else if (key == "run_name") cfg.run_name = value;
    else if (key == "eval_every_round") cfg.eval_every_round = parse_bool(value);
    else throw ValidationError("unknown config key: " + key);
}

void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError(path + ":" + std::to_string(lineno) + ": expected key=value");
        apply_key_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

}  // namespace fedclass
