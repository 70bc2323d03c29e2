#include "fedclass/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "fedclass/errors.hpp"

namespace fedclass {
namespace {

using nlohmann::json;

// Integer correct-count over the selected samples; exact regardless of order.
std::optional<double> accuracy_over(const ModelParams& model, const Dataset& test_set,
                                    const std::set<int>* task_classes) {
    const std::size_t head = model.output_dim();
    std::size_t total = 0;
    std::size_t correct = 0;
    Batch one;
    one.inputs = Matrix(1, test_set.inputs.cols);
    for (std::size_t i = 0; i < test_set.size(); ++i) {
        const int label = test_set.labels[i];
        if (static_cast<std::size_t>(label) >= head) continue;
        if (task_classes && !task_classes->count(label)) continue;
        std::copy(test_set.inputs.row(i), test_set.inputs.row(i) + test_set.inputs.cols,
                  one.inputs.row(0));
        const Matrix logits = forward(model, one);
        const double* row = logits.row(0);
        const std::size_t pred = std::max_element(row, row + head) - row;
        ++total;
        if (pred == static_cast<std::size_t>(label)) ++correct;
    }
    if (total == 0) return std::nullopt;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

json optional_to_json(const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
}

std::optional<double> json_to_optional(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

}  // namespace

std::optional<double> task_accuracy(const ModelParams& model, const Dataset& test_set,
                                    const std::set<int>& task_classes) {
    return accuracy_over(model, test_set, &task_classes);
}

std::optional<double> global_accuracy(const ModelParams& model, const Dataset& test_set) {
    return accuracy_over(model, test_set, nullptr);
}

std::optional<double> forgetting(const std::vector<std::vector<std::optional<double>>>& history,
                                 std::size_t task) {
    std::optional<double> best_earlier;
    std::optional<double> final_value;
    for (std::size_t e = 0; e < history.size(); ++e) {
        if (task >= history[e].size() || !history[e][task]) continue;
        if (final_value && (!best_earlier || *final_value > *best_earlier))
            best_earlier = final_value;
        final_value = history[e][task];
    }
    if (!best_earlier || !final_value) return std::nullopt;
    return *best_earlier - *final_value;
}

void finalize_forgetting(RunReport& report) {
    std::size_t task_count = 0;
    for (const auto& row : report.task_accuracy) task_count = std::max(task_count, row.size());
    report.forgetting.assign(task_count, std::nullopt);
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t t = 0; t < task_count; ++t) {
        report.forgetting[t] = forgetting(report.task_accuracy, t);
        if (report.forgetting[t] && t + 1 < task_count) {
            sum += *report.forgetting[t];
            ++defined;
        }
    }
    report.avg_forgetting =
        defined > 0 ? std::optional<double>(sum / static_cast<double>(defined)) : std::nullopt;
}

void write_report(const RunReport& report, const std::string& path, ReportFormat format) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open report file for writing: " + path);

    if (format == ReportFormat::kJson) {
        json j;
        j["seed"] = report.seed;
        j["config"] = report.config_echo;
        json acc = json::array();
        for (const auto& row : report.task_accuracy) {
            json jrow = json::array();
            for (const auto& v : row) jrow.push_back(optional_to_json(v));
            acc.push_back(jrow);
        }
        j["task_accuracy"] = acc;
        j["global_accuracy"] = report.global_accuracy;
        json forg = json::array();
        for (const auto& v : report.forgetting) forg.push_back(optional_to_json(v));
        j["forgetting"] = forg;
        j["avg_forgetting"] = optional_to_json(report.avg_forgetting);
        out << j.dump(2) << '\n';
    } else {
        out << "eval_point,task,accuracy\n";
        std::size_t task_count = 0;
        for (const auto& row : report.task_accuracy) task_count = std::max(task_count, row.size());
        char buf[32];
        auto fmt = [&](double v) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            return std::string(buf);
        };
        for (std::size_t e = 0; e < report.task_accuracy.size(); ++e)
            for (std::size_t t = 0; t < task_count; ++t) {
                out << (e + 1) << ',' << (t + 1) << ',';
                if (t < report.task_accuracy[e].size() && report.task_accuracy[e][t])
                    out << fmt(*report.task_accuracy[e][t]);
                out << '\n';
            }
        out << "summary,global_accuracy," << fmt(report.final_global_accuracy()) << '\n';
        for (std::size_t t = 0; t < report.forgetting.size(); ++t)
            if (report.forgetting[t])
                out << "summary,forgetting_task_" << (t + 1) << ',' << fmt(*report.forgetting[t])
                    << '\n';
        if (report.avg_forgetting)
            out << "summary,avg_forgetting," << fmt(*report.avg_forgetting) << '\n';
    }
    if (!out) throw IoError("write failure: " + path);
}

RunReport read_report_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report file: " + path);
    json j = json::parse(in);
    RunReport report;
    report.seed = j.at("seed").get<std::uint64_t>();
    report.config_echo = j.at("config").get<std::map<std::string, std::string>>();
    for (const auto& jrow : j.at("task_accuracy")) {
        std::vector<std::optional<double>> row;
        for (const auto& v : jrow) row.push_back(json_to_optional(v));
        report.task_accuracy.push_back(std::move(row));
    }
    report.global_accuracy = j.at("global_accuracy").get<std::vector<double>>();
    for (const auto& v : j.at("forgetting")) report.forgetting.push_back(json_to_optional(v));
    report.avg_forgetting = json_to_optional(j.at("avg_forgetting"));
    return report;
}

}  // namespace fedclass
