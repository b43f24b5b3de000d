#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "bmi/cl.hpp"

namespace bmi::report {

inline constexpr int kSchemaVersion = 1;

nlohmann::json phase_to_json(const cl::PhaseMetrics& pm);
nlohmann::json report_to_json(const cl::WorkflowReport& r);

// Bundle of seeded replications of one configuration, with per-phase
// mean/std aggregates. `resolved_config` is embedded verbatim.
nlohmann::json replications_to_json(const std::vector<cl::WorkflowReport>& runs,
                                    const nlohmann::json& resolved_config);

// Flat CSV: one row per (seed, phase).
std::string replications_to_csv(const std::vector<cl::WorkflowReport>& runs);

void write_file(const std::string& path, const std::string& content);
nlohmann::json load_json(const std::string& path);

struct DiffResult {
    int phases = 0;
    std::vector<double> acc_avg_delta;  // a - b, per phase
    std::vector<double> acc_new_delta;
    double max_acc_delta = 0.0;
    int max_acc_delta_phase = 0;  // ns attaining the max
};

// Per-phase aggregate deltas between two replication reports (a minus b).
DiffResult report_diff(const nlohmann::json& a, const nlohmann::json& b);
nlohmann::json diff_to_json(const DiffResult& d);

}  // namespace bmi::report
