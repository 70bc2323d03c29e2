#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "fedclass/federation.hpp"

namespace py = pybind11;
using namespace fedclass;

namespace {

ExperimentConfig config_from_dict(const py::dict& d) {
    ExperimentConfig cfg;
    for (auto item : d)
        apply_key_value(cfg, py::str(item.first).cast<std::string>(),
                        py::str(item.second).cast<std::string>());
    return cfg;
}

std::string report_to_json(const RunReport& report) {
    nlohmann::json j;
    j["seed"] = report.seed;
    j["config"] = report.config_echo;
    nlohmann::json acc = nlohmann::json::array();
    for (const auto& row : report.task_accuracy) {
        nlohmann::json jrow = nlohmann::json::array();
        for (const auto& v : row) jrow.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
        acc.push_back(jrow);
    }
    j["task_accuracy"] = acc;
    j["global_accuracy"] = report.global_accuracy;
    nlohmann::json forg = nlohmann::json::array();
    for (const auto& v : report.forgetting)
        forg.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    j["forgetting"] = forg;
    j["avg_forgetting"] =
        report.avg_forgetting ? nlohmann::json(*report.avg_forgetting) : nlohmann::json(nullptr);
    return j.dump();
}

}  // namespace

PYBIND11_MODULE(_fedclass, m) {
    m.doc() = "FedCLASS federated class-incremental learning simulator";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

    m.def(
        "softmax_temp",
        [](const std::vector<double>& logits, double theta) {
            return softmax_temp(logits, theta).probs;
        },
        py::arg("logits"), py::arg("theta") = 1.0);

    m.def(
        "cross_entropy",
        [](const std::vector<double>& scores, int label) {
            return cross_entropy(ScoreVector{scores}, label);
        },
        py::arg("scores"), py::arg("label"));

    m.def(
        "kl_divergence",
        [](const std::vector<double>& target, const std::vector<double>& student) {
            return kl_divergence(ScoreVector{target}, ScoreVector{student});
        },
        py::arg("target"), py::arg("student"));

    m.def(
        "augment_scores",
        [](const std::vector<double>& hist_logits, const std::vector<double>& curr_logits,
           std::size_t old_count, std::size_t new_count, double theta) {
            return augment_scores(hist_logits, curr_logits, ClassSplit{old_count, new_count},
                                  theta)
                .probs;
        },
        py::arg("hist_logits"), py::arg("curr_logits"), py::arg("old_count"),
        py::arg("new_count"), py::arg("theta") = 2.0);

    m.def(
        "theorem_oracle",
        [](const std::vector<double>& hist_probs, const std::vector<double>& curr_probs) {
            return theorem_oracle(ScoreVector{hist_probs}, ScoreVector{curr_probs}).probs;
        },
        py::arg("hist_probs"), py::arg("curr_probs"));

    m.def(
        "run_experiment",
        [](const py::dict& config, std::uint64_t seed) {
            const ExperimentConfig cfg = config_from_dict(config);
            return report_to_json(run_experiment(cfg, seed).report);
        },
        py::arg("config"), py::arg("seed") = 1,
        "Run one seeded experiment; returns the RunReport as a JSON string.");

    m.def("default_config", [] {
        py::dict d;
        for (const auto& [k, v] : ExperimentConfig{}.echo()) d[py::str(k)] = v;
        return d;
    });
}
