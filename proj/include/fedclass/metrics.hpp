#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedclass/data.hpp"
#include "fedclass/tensor_core.hpp"

namespace fedclass {

// Accuracy/forgetting history of one experiment run. task_accuracy[e][t] is
// the accuracy (%) of task t at evaluation point e; nullopt where the task
// had not been introduced yet (or had no test samples).
struct RunReport {
    std::uint64_t seed = 0;
    std::map<std::string, std::string> config_echo;
    std::vector<std::vector<std::optional<double>>> task_accuracy;
    std::vector<double> global_accuracy;            // one per evaluation point
    std::vector<std::optional<double>> forgetting;  // per task, final eval vs best earlier
    std::optional<double> avg_forgetting;

    double final_global_accuracy() const {
        return global_accuracy.empty() ? 0.0 : global_accuracy.back();
    }
};

enum class ReportFormat { kCsv, kJson };

// Percent of test samples with labels in `task_classes` that the model gets
// right (argmax over all current head slots). nullopt when the task has no
// test samples.
std::optional<double> task_accuracy(const ModelParams& model, const Dataset& test_set,
                                    const std::set<int>& task_classes);

// As task_accuracy over every test sample whose label the current head covers.
std::optional<double> global_accuracy(const ModelParams& model, const Dataset& test_set);

// Max earlier accuracy minus final accuracy for one task's history column;
// nullopt with fewer than two defined evaluations.
std::optional<double> forgetting(const std::vector<std::vector<std::optional<double>>>& history,
                                 std::size_t task);

// Fills report.forgetting / avg_forgetting from its accuracy history. The
// final task is excluded from the average.
void finalize_forgetting(RunReport& report);

void write_report(const RunReport& report, const std::string& path, ReportFormat format);
RunReport read_report_json(const std::string& path);

}  // namespace fedclass
