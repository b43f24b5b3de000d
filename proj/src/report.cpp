#include "bmi/report.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace bmi::report {

using nlohmann::json;

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json confusion_to_json(const nn::ConfusionMatrix& cm) {
    json rows = json::array();
    for (int t = 0; t < cm.n_classes; ++t) {
        json row = json::array();
        for (int p = 0; p < cm.n_classes; ++p) row.push_back(cm.at(t, p));
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

json phase_to_json(const cl::PhaseMetrics& pm) {
    json j;
    j["ns"] = pm.ns;
    j["acc_per_session"] = pm.acc_per_session;
    j["acc_avg"] = pm.acc_avg;
    j["acc_new"] = pm.acc_new;
    j["pre_avg"] = opt(pm.pre_avg);
    j["rec_avg"] = opt(pm.rec_avg);
    j["spe_avg"] = opt(pm.spe_avg);
    j["pre_new"] = opt(pm.pre_new);
    j["rec_new"] = opt(pm.rec_new);
    j["spe_new"] = opt(pm.spe_new);
    json cms = json::array();
    for (const auto& cm : pm.per_session) cms.push_back(confusion_to_json(cm));
    j["confusions"] = cms;
    return j;
}

json report_to_json(const cl::WorkflowReport& r) {
    json j;
    j["task"] = r.task;
    j["strategy"] = r.strategy;
    j["seed"] = r.seed;
    j["n_sessions"] = r.n_sessions;
    j["positive_class"] = r.positive_class;
    json phases = json::array();
    for (const auto& p : r.phases) phases.push_back(phase_to_json(p));
    j["phases"] = phases;
    return j;
}

json replications_to_json(const std::vector<cl::WorkflowReport>& runs, const json& resolved_config) {
    if (runs.empty()) throw ParameterError("no replications to report");
    json j;
    j["schema_version"] = kSchemaVersion;
    j["tool"] = std::string(kToolVersion);
    j["task"] = runs.front().task;
    j["strategy"] = runs.front().strategy;
    j["config"] = resolved_config;
    json reps = json::array();
    for (const auto& r : runs) reps.push_back(report_to_json(r));
    j["replications"] = reps;

    const std::size_t phases = runs.front().phases.size();
    for (const auto& r : runs)
        if (r.phases.size() != phases) throw ParameterError("replications disagree on phase count");

    auto aggregate = [&](auto pick) {
        json mean = json::array(), sd = json::array();
        for (std::size_t p = 0; p < phases; ++p) {
            std::vector<double> vals;
            for (const auto& r : runs) vals.push_back(pick(r.phases[p]));
            mean.push_back(mean_of(vals));
            sd.push_back(stddev_of(vals));
        }
        json out;
        out["mean"] = mean;
        out["std"] = sd;
        return out;
    };
    json agg;
    agg["acc_avg"] = aggregate([](const cl::PhaseMetrics& p) { return p.acc_avg; });
    agg["acc_new"] = aggregate([](const cl::PhaseMetrics& p) { return p.acc_new; });
    j["aggregate"] = agg;
    return j;
}

std::string replications_to_csv(const std::vector<cl::WorkflowReport>& runs) {
    std::ostringstream os;
    os << "seed,ns,acc_avg,acc_new,pre_avg,rec_avg,spe_avg,pre_new,rec_new,spe_new\n";
    auto cell = [&](const std::optional<double>& v) {
        if (v) os << *v;
    };
    for (const auto& r : runs) {
        for (const auto& p : r.phases) {
            os << r.seed << ',' << p.ns << ',' << p.acc_avg << ',' << p.acc_new << ',';
            cell(p.pre_avg);
            os << ',';
            cell(p.rec_avg);
            os << ',';
            cell(p.spe_avg);
            os << ',';
            cell(p.pre_new);
            os << ',';
            cell(p.rec_new);
            os << ',';
            cell(p.spe_new);
            os << '\n';
        }
    }
    return os.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw LoadError("cannot open for writing: " + path);
    os << content;
    if (!os) throw LoadError("failed writing: " + path);
}

json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw LoadError("cannot open: " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw LoadError("bad JSON in " + path + ": " + e.what());
    }
    return j;
}

DiffResult report_diff(const json& a, const json& b) {
    const auto& am = a.at("aggregate").at("acc_avg").at("mean");
    const auto& bm = b.at("aggregate").at("acc_avg").at("mean");
    const auto& an = a.at("aggregate").at("acc_new").at("mean");
    const auto& bn = b.at("aggregate").at("acc_new").at("mean");
    if (am.size() != bm.size()) throw ParameterError("reports cover different phase counts");

    DiffResult d;
    d.phases = static_cast<int>(am.size());
    for (int p = 0; p < d.phases; ++p) {
        const double da = am[p].get<double>() - bm[p].get<double>();
        d.acc_avg_delta.push_back(da);
        d.acc_new_delta.push_back(an[p].get<double>() - bn[p].get<double>());
        if (p == 0 || da > d.max_acc_delta) {
            d.max_acc_delta = da;
            d.max_acc_delta_phase = p + 1;  // ns is 1-based
        }
    }
    return d;
}

json diff_to_json(const DiffResult& d) {
    json j;
    j["phases"] = d.phases;
    j["acc_avg_delta"] = d.acc_avg_delta;
    j["acc_new_delta"] = d.acc_new_delta;
    j["max_acc_delta"] = d.max_acc_delta;
    j["max_acc_delta_phase"] = d.max_acc_delta_phase;
    return j;
}

}  // namespace bmi::report
