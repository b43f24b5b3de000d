// bmicl: experiment runner for the EEG continual-learning pipeline.
// Subcommands: gen-data, cv, tl, cl, qat, odl, depth-sweep, diff.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <future>
#include <iostream>

#include "bmi/cl.hpp"
#include "bmi/data.hpp"
#include "bmi/nn.hpp"
#include "bmi/odl.hpp"
#include "bmi/quant.hpp"
#include "bmi/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bmi;

namespace {

struct DataOptions {
    std::string data_dir;
    bool synthetic = false;
    int sessions = 4;
    int trials = 40;
    int classes = 2;
    double rotation = 40.0;
    double noise = 0.3;
    std::uint64_t data_seed = 1;
};

struct CommonOptions {
    std::string out_dir = "runs";
    std::string seeds_spec = "5";
    int jobs = 2;
};

void add_data_flags(CLI::App* cmd, DataOptions& d) {
    cmd->add_option("--data", d.data_dir, "dataset directory (session_<k>/manifest.json layout)");
    cmd->add_flag("--synthetic", d.synthetic, "use the synthetic drift generator");
    cmd->add_option("--sessions", d.sessions, "synthetic: number of sessions");
    cmd->add_option("--trials", d.trials, "synthetic: trials per session");
    cmd->add_option("--classes", d.classes, "synthetic: number of classes");
    cmd->add_option("--rotation", d.rotation, "synthetic: channel rotation per session, degrees");
    cmd->add_option("--noise", d.noise, "synthetic: noise level");
    cmd->add_option("--data-seed", d.data_seed, "synthetic: generator seed");
}

data::SyntheticDriftConfig synth_config(const DataOptions& d) {
    data::SyntheticDriftConfig cfg = data::drift_benchmark_config(d.classes, d.data_seed);
    cfg.n_sessions = d.sessions;
    cfg.trials_per_session = d.trials;
    cfg.rotation_per_session_deg = d.rotation;
    cfg.noise_level = d.noise;
    return cfg;
}

cl::SessionSequence resolve_dataset(const DataOptions& d, json& resolved) {
    if (!d.data_dir.empty() && d.synthetic) throw ConfigError("choose exactly one of --data / --synthetic");
    if (!d.data_dir.empty()) {
        resolved["data"] = {{"source", "directory"}, {"path", d.data_dir}};
        return data::load_sessions(d.data_dir);
    }
    if (!d.synthetic) throw ConfigError("no data source: pass --data DIR or --synthetic");
    auto cfg = synth_config(d);
    resolved["data"] = {{"source", "synthetic"},
                        {"sessions", cfg.n_sessions},
                        {"trials_per_session", cfg.trials_per_session},
                        {"classes", cfg.n_classes},
                        {"rotation_per_session_deg", cfg.rotation_per_session_deg},
                        {"noise_level", cfg.noise_level},
                        {"seed", cfg.seed}};
    return data::generate_synthetic(cfg);
}

std::vector<std::uint64_t> parse_seeds(const std::string& spec) {
    std::vector<std::uint64_t> out;
    if (spec.find(',') == std::string::npos) {
        const long n = std::stol(spec);
        if (n < 1) throw ConfigError("seed count must be positive");
        for (long i = 1; i <= n; ++i) out.push_back(static_cast<std::uint64_t>(i));
        return out;
    }
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoull(tok));
    if (out.empty()) throw ConfigError("empty seed list");
    return out;
}

int infer_classes(const cl::SessionSequence& seq) {
    int mx = 0;
    for (const auto& s : seq)
        for (const auto& t : s) mx = std::max(mx, t.label);
    return mx + 1;
}

json strategy_json(const cl::StrategyConfig& sc) {
    return json{{"kind", cl::to_string(sc.kind)},
                {"er_capacity", sc.er_capacity},
                {"lwf_lambda_o", sc.lwf_lambda_o},
                {"lwf_temperature", sc.lwf_temperature},
                {"ewc_lambda", sc.ewc_lambda},
                {"epochs", sc.epochs},
                {"pretrain_epochs", sc.pretrain_epochs},
                {"batch_size", sc.batch_size},
                {"lr", sc.lr},
                {"depth", sc.depth}};
}

// seeds fan out over worker slots; each replication is internally sequential
template <typename Fn>
auto run_replications(const std::vector<std::uint64_t>& seeds, int jobs, Fn fn) {
    using R = decltype(fn(std::uint64_t{1}));
    std::vector<R> results(seeds.size());
    std::size_t next = 0;
    while (next < seeds.size()) {
        const std::size_t wave = std::min<std::size_t>(jobs < 1 ? 1 : jobs, seeds.size() - next);
        std::vector<std::future<R>> futs;
        for (std::size_t i = 0; i < wave; ++i)
            futs.push_back(std::async(std::launch::async, fn, seeds[next + i]));
        for (std::size_t i = 0; i < wave; ++i) results[next + i] = futs[i].get();
        next += wave;
    }
    return results;
}

void write_reports(const std::string& out_dir, const std::string& name,
                   const std::vector<cl::WorkflowReport>& runs, const json& resolved) {
    fs::create_directories(out_dir);
    const json j = report::replications_to_json(runs, resolved);
    report::write_file((fs::path(out_dir) / (name + ".json")).string(), j.dump(2) + "\n");
    report::write_file((fs::path(out_dir) / (name + ".csv")).string(), report::replications_to_csv(runs));
    std::cout << "wrote " << (fs::path(out_dir) / (name + ".json")).string() << "\n";

    // per-phase summary table
    const auto& agg = j["aggregate"]["acc_avg"];
    std::printf("phase |  Acc(1:ns) mean ± std\n");
    for (std::size_t p = 0; p < agg["mean"].size(); ++p)
        std::printf("  %2zu  |  %6.2f ± %.2f\n", p + 1, agg["mean"][p].get<double>(), agg["std"][p].get<double>());
}

// ---------------------------------------------------------------
// subcommand bodies
// ---------------------------------------------------------------

int cmd_gen_data(const DataOptions& d, const std::string& out) {
    auto cfg = synth_config(d);
    data::generate_raw_dataset(cfg, out);
    std::cout << "wrote " << cfg.n_sessions << " sessions x " << cfg.trials_per_session << " trials to " << out
              << "\n";
    return 0;
}

int cmd_cv(const DataOptions& d, const CommonOptions& c, int epochs, int batch) {
    json resolved;
    auto seq = resolve_dataset(d, resolved);
    auto seeds = parse_seeds(c.seeds_spec);
    resolved["task"] = "within_session_cv";
    resolved["epochs"] = epochs;
    resolved["batch_size"] = batch;
    resolved["tool"] = std::string(kToolVersion);

    nn::ModelConfig mc;
    mc.n_classes = infer_classes(seq);

    json sessions = json::array();
    std::printf("session | 5-fold accuracy per seed\n");
    for (std::size_t s = 0; s < seq.size(); ++s) {
        nn::TrialList list;
        std::vector<int> labels;
        for (const auto& t : seq[s]) {
            list.push_back(&t);
            labels.push_back(t.label);
        }
        json per_seed = json::array();
        std::printf("  S%-3zu |", s + 1);
        for (std::uint64_t seed : seeds) {
            auto cv = nn::five_fold_cv(list, labels, mc, epochs, Rng(seed), batch);
            per_seed.push_back({{"seed", seed},
                                {"mean_pct", cv.mean_pct},
                                {"std_pct", cv.std_pct},
                                {"stratified", cv.stratified}});
            std::printf(" %.1f±%.1f", cv.mean_pct, cv.std_pct);
        }
        std::printf("\n");
        sessions.push_back({{"session", s + 1}, {"cv", per_seed}});
    }
    resolved["sessions"] = sessions;
    fs::create_directories(c.out_dir);
    report::write_file((fs::path(c.out_dir) / "cv.json").string(), resolved.dump(2) + "\n");
    return 0;
}

int cmd_workflow(const DataOptions& d, const CommonOptions& c, cl::StrategyConfig sc, int positive_class,
                 bool save_models) {
    json resolved;
    auto seq = resolve_dataset(d, resolved);
    auto seeds = parse_seeds(c.seeds_spec);
    resolved["strategy"] = strategy_json(sc);
    resolved["positive_class"] = positive_class;
    resolved["seeds"] = seeds;
    resolved["tool"] = std::string(kToolVersion);

    nn::ModelConfig mc;
    mc.n_classes = infer_classes(seq);

    auto runs = run_replications(seeds, c.jobs, [&](std::uint64_t seed) {
        cl::WorkflowConfig wc;
        wc.model = mc;
        wc.strategy = sc;
        wc.positive_class = positive_class;
        wc.seed = seed;
        return cl::run_cl_workflow(seq, wc);
    });

    std::vector<cl::WorkflowReport> reports;
    for (auto& r : runs) reports.push_back(r.report);
    const std::string name = sc.kind == cl::StrategyKind::NaiveTL ? "tl" : "cl_" + cl::to_string(sc.kind);
    write_reports(c.out_dir, name, reports, resolved);

    if (save_models) {
        for (std::size_t i = 0; i < runs.size(); ++i) {
            const std::string mpath =
                (fs::path(c.out_dir) / (name + "_model_seed" + std::to_string(seeds[i]) + ".bin")).string();
            nn::save_model(runs[i].final_model, mpath);
        }
    }
    return 0;
}

int cmd_qat(const DataOptions& d, const CommonOptions& c, int pretrain_epochs, int qat_epochs, int batch) {
    json resolved;
    auto seq = resolve_dataset(d, resolved);
    auto seeds = parse_seeds(c.seeds_spec);
    const std::uint64_t seed = seeds.front();

    nn::ModelConfig mc;
    mc.n_classes = infer_classes(seq);

    auto split = cl::split_session(seq.front());
    Rng rng(seed);
    nn::Model m = nn::init_model(mc, rng.split("init").next_u64());
    nn::TrainOptions opts;
    opts.epochs = pretrain_epochs;
    opts.batch_size = batch;
    nn::train(m, split.train, opts, rng.split("fp32"));
    const double fp32_acc = nn::evaluate(m, split.test).accuracy_pct;

    quant::QatState qs = quant::init_clip_bounds(m);
    opts.epochs = qat_epochs;
    quant::qat_train(m, qs, split.train, opts, rng.split("qat"));
    quant::FakeQuantContext ctx(qs, m);
    const double fq_acc = nn::evaluate(m, split.test, &ctx).accuracy_pct;

    quant::QuantizedModel qm = quant::integerize(m, qs, split.train);
    const double int8_acc = quant::int8_evaluate(qm, split.test).accuracy_pct;

    fs::create_directories(c.out_dir);
    const std::string mpath = (fs::path(c.out_dir) / "model_fp32.bin").string();
    const std::string qpath = (fs::path(c.out_dir) / "model_int8.bin").string();
    nn::save_model(m, mpath);
    quant::save_quantized(qm, qpath);
    odl::TrainableHead head = odl::TrainableHead::from_quantized(qm);
    odl::save_head(head, (fs::path(c.out_dir) / "head_fp32.bin").string());

    std::printf("fp32 test acc: %.2f%%  fake-quant: %.2f%%  int8: %.2f%%\n", fp32_acc, fq_acc, int8_acc);
    std::cout << "wrote " << qpath << "\n";

    json j = resolved;
    j["task"] = "qat";
    j["seed"] = seed;
    j["fp32_acc"] = fp32_acc;
    j["fake_quant_acc"] = fq_acc;
    j["int8_acc"] = int8_acc;
    j["tool"] = std::string(kToolVersion);
    report::write_file((fs::path(c.out_dir) / "qat.json").string(), j.dump(2) + "\n");
    return 0;
}

int cmd_odl(const DataOptions& d, const CommonOptions& c, const std::string& backbone_path,
            const std::string& head_path, const std::string& strategy, std::size_t er_capacity, int epochs,
            bool memory_only, bool cache_features) {
    const odl::OdlStrategy strat = odl::odl_strategy_from_string(strategy);

    if (memory_only) {
        nn::ModelConfig mc;
        if (!backbone_path.empty()) mc = quant::load_quantized(backbone_path).cfg;
        mc.n_classes = d.classes;
        std::size_t blob_bytes = 0;
        if (!backbone_path.empty()) blob_bytes = fs::file_size(backbone_path);
        auto budget = odl::memory_report(mc, strat, er_capacity, 10, cache_features, blob_bytes);
        std::cout << odl::memory_report_json(budget);
        return 0;
    }

    if (backbone_path.empty()) throw ConfigError("--backbone is required (run `bmicl qat` first)");
    json resolved;
    auto seq = resolve_dataset(d, resolved);

    odl::FrozenBackbone bb = odl::FrozenBackbone::load(backbone_path);
    odl::TrainableHead head = head_path.empty()
                                  ? odl::TrainableHead::from_quantized(quant::load_quantized(backbone_path))
                                  : odl::load_head(head_path);

    odl::OdlConfig ocfg;
    ocfg.strategy = strat;
    ocfg.er_capacity = er_capacity;
    ocfg.er_cache_features = cache_features;
    ocfg.epochs = epochs;
    ocfg.seed = parse_seeds(c.seeds_spec).front();
    odl::OdlEngine engine(bb, std::move(head), ocfg);

    const auto hash_before = bb.content_hash();
    json phases = json::array();
    std::printf("phase | before -> after (newest-session accuracy)\n");
    for (std::size_t s = 1; s < seq.size(); ++s) {
        auto r = engine.adapt(seq[s]);
        std::printf("  %2zu  | %6.2f -> %6.2f\n", s + 1, r.acc_before_pct, r.acc_after_pct);
        phases.push_back({{"ns", s + 1}, {"acc_before", r.acc_before_pct}, {"acc_after", r.acc_after_pct}});
    }
    if (bb.content_hash() != hash_before) throw StateError("backbone mutated during the session");

    auto budget = odl::memory_report(bb.config(), strat, er_capacity, ocfg.batch_size, cache_features,
                                     fs::file_size(backbone_path));
    json j = resolved;
    j["task"] = "odl_sim";
    j["strategy"] = to_string(strat);
    j["phases"] = phases;
    j["memory"] = json::parse(odl::memory_report_json(budget));
    j["backbone_sha256"] = odl::hex(hash_before);
    j["tool"] = std::string(kToolVersion);
    fs::create_directories(c.out_dir);
    report::write_file((fs::path(c.out_dir) / "odl.json").string(), j.dump(2) + "\n");
    fs::path head_out = fs::path(c.out_dir) / "head_adapted.bin";
    odl::save_head(engine.head(), head_out.string());
    std::cout << "wrote " << head_out.string() << "\n";
    return 0;
}

int cmd_depth_sweep(const DataOptions& d, const CommonOptions& c, const std::string& depths_spec, int epochs,
                    int pretrain_epochs) {
    json resolved;
    auto seq = resolve_dataset(d, resolved);
    auto seeds = parse_seeds(c.seeds_spec);

    std::vector<int> depths;
    {
        std::stringstream ss(depths_spec);
        std::string tok;
        while (std::getline(ss, tok, ',')) depths.push_back(std::stoi(tok));
    }

    cl::WorkflowConfig wc;
    wc.model.n_classes = infer_classes(seq);
    wc.strategy.epochs = epochs;
    wc.strategy.pretrain_epochs = pretrain_epochs;

    auto sweep = cl::adaptation_depth_sweep(seq, depths, wc, seeds);

    json j = resolved;
    j["task"] = "depth_sweep";
    j["tool"] = std::string(kToolVersion);
    json table = json::array();
    std::printf("depth | newest-session accuracy per phase (mean ± std over %zu seeds)\n", seeds.size());
    for (std::size_t di = 0; di < depths.size(); ++di) {
        std::printf("  %d   |", depths[di]);
        json row;
        row["depth"] = depths[di];
        row["mean"] = sweep.mean[di];
        row["std"] = sweep.stddev[di];
        for (std::size_t p = 0; p < sweep.mean[di].size(); ++p)
            std::printf("  %6.2f ± %-5.2f", sweep.mean[di][p], sweep.stddev[di][p]);
        std::printf("\n");
        table.push_back(row);
    }
    j["depths"] = table;
    fs::create_directories(c.out_dir);
    report::write_file((fs::path(c.out_dir) / "depth_sweep.json").string(), j.dump(2) + "\n");
    return 0;
}

int cmd_diff(const std::string& a_path, const std::string& b_path) {
    const json a = report::load_json(a_path);
    const json b = report::load_json(b_path);
    auto d = report::report_diff(a, b);
    std::printf("phase | dAcc(1:ns) | dAcc(ns)\n");
    for (int p = 0; p < d.phases; ++p)
        std::printf("  %2d  | %+8.2f  | %+8.2f\n", p + 1, d.acc_avg_delta[p], d.acc_new_delta[p]);
    std::printf("max Acc(1:ns) delta: %+.2f at phase %d\n", d.max_acc_delta, d.max_acc_delta_phase);
    std::cout << report::diff_to_json(d).dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EEG motor-task continual-learning pipeline"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "write a synthetic raw dataset");
    DataOptions gen_data_opts;
    gen_data_opts.synthetic = true;
    std::string gen_out = "dataset";
    add_data_flags(gen, gen_data_opts);
    gen->add_option("--out", gen_out, "output directory");

    // cv
    auto* cv = app.add_subcommand("cv", "within-session 5-fold cross-validation");
    DataOptions cv_data;
    CommonOptions cv_common;
    int cv_epochs = 40, cv_batch = 4;
    add_data_flags(cv, cv_data);
    cv->add_option("--epochs", cv_epochs);
    cv->add_option("--batch", cv_batch);
    cv->add_option("--seeds", cv_common.seeds_spec, "seed count or comma list");
    cv->add_option("--out", cv_common.out_dir);
    cv->set_config("--config", "", "config file with long-option keys");

    // tl / cl
    auto add_workflow_flags = [&](CLI::App* cmd, DataOptions& dd, CommonOptions& cc, cl::StrategyConfig& sc,
                                  int& positive, bool& save_models) {
        add_data_flags(cmd, dd);
        cmd->add_option("--epochs", sc.epochs, "fine-tuning epochs per phase");
        cmd->add_option("--pretrain-epochs", sc.pretrain_epochs);
        cmd->add_option("--batch", sc.batch_size);
        cmd->add_option("--lr", sc.lr);
        cmd->add_option("--er-capacity", sc.er_capacity);
        cmd->add_option("--lwf-lambda", sc.lwf_lambda_o);
        cmd->add_option("--lwf-temperature", sc.lwf_temperature);
        cmd->add_option("--ewc-lambda", sc.ewc_lambda);
        cmd->add_option("--depth", sc.depth, "adaptation depth 1..6");
        cmd->add_option("--positive-class", positive);
        cmd->add_flag("--save-models,!--no-save-models", save_models, "write final models per seed");
        cmd->add_option("--seeds", cc.seeds_spec, "seed count or comma list");
        cmd->add_option("--jobs", cc.jobs, "parallel replication slots");
        cmd->add_option("--out", cc.out_dir);
        cmd->set_config("--config", "", "config file with long-option keys");
    };

    auto* tl = app.add_subcommand("tl", "chain transfer-learning workflow");
    DataOptions tl_data;
    CommonOptions tl_common;
    cl::StrategyConfig tl_sc;
    int tl_positive = 0;
    bool tl_save = true;
    add_workflow_flags(tl, tl_data, tl_common, tl_sc, tl_positive, tl_save);

    auto* clw = app.add_subcommand("cl", "continual-learning workflow");
    DataOptions cl_data;
    CommonOptions cl_common;
    cl::StrategyConfig cl_sc;
    int cl_positive = 0;
    bool cl_save = true;
    std::string cl_strategy = "er";
    clw->add_option("--strategy", cl_strategy, "er | lwf | ewc | naive | joint");
    add_workflow_flags(clw, cl_data, cl_common, cl_sc, cl_positive, cl_save);

    // qat
    auto* qat = app.add_subcommand("qat", "fp32 pretraining + quantization-aware training + integerization");
    DataOptions qat_data;
    CommonOptions qat_common;
    int qat_pre = 40, qat_epochs = 50, qat_batch = 10;
    add_data_flags(qat, qat_data);
    qat->add_option("--pretrain-epochs", qat_pre);
    qat->add_option("--qat-epochs", qat_epochs);
    qat->add_option("--batch", qat_batch);
    qat->add_option("--seeds", qat_common.seeds_spec);
    qat->add_option("--out", qat_common.out_dir);

    // odl
    auto* odlc = app.add_subcommand("odl", "simulated on-device learning (frozen int8 backbone)");
    DataOptions odl_data;
    CommonOptions odl_common;
    std::string odl_backbone, odl_head, odl_strategy = "tl";
    std::size_t odl_cap = 20;
    int odl_epochs = 50;
    bool odl_memory = false, odl_cache = false;
    add_data_flags(odlc, odl_data);
    odlc->add_option("--backbone", odl_backbone, "quantized backbone blob");
    odlc->add_option("--head", odl_head, "fp32 head checkpoint (default: from the blob)");
    odlc->add_option("--strategy", odl_strategy, "tl | er | lwf");
    odlc->add_option("--er-capacity", odl_cap);
    odlc->add_option("--epochs", odl_epochs);
    odlc->add_flag("--memory-report", odl_memory, "print the byte-exact memory budget and exit");
    odlc->add_flag("--cache-features", odl_cache, "cache replay features instead of recomputing");
    odlc->add_option("--seeds", odl_common.seeds_spec);
    odlc->add_option("--out", odl_common.out_dir);

    // depth-sweep
    auto* sweep = app.add_subcommand("depth-sweep", "newest-session accuracy per adaptation depth");
    DataOptions sw_data;
    CommonOptions sw_common;
    std::string sw_depths = "1,2,3,4,5,6";
    int sw_epochs = 50, sw_pre = 40;
    add_data_flags(sweep, sw_data);
    sweep->add_option("--depths", sw_depths, "comma list of depths 1..6");
    sweep->add_option("--epochs", sw_epochs);
    sweep->add_option("--pretrain-epochs", sw_pre);
    sweep->add_option("--seeds", sw_common.seeds_spec);
    sweep->add_option("--out", sw_common.out_dir);

    // diff
    auto* diffc = app.add_subcommand("diff", "per-phase metric deltas between two reports");
    std::string diff_a, diff_b;
    diffc->add_option("report_a", diff_a)->required();
    diffc->add_option("report_b", diff_b)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_data_opts, gen_out);
        if (cv->parsed()) return cmd_cv(cv_data, cv_common, cv_epochs, cv_batch);
        if (tl->parsed()) {
            tl_sc.kind = cl::StrategyKind::NaiveTL;
            return cmd_workflow(tl_data, tl_common, tl_sc, tl_positive, tl_save);
        }
        if (clw->parsed()) {
            cl_sc.kind = cl::strategy_from_string(cl_strategy);
            return cmd_workflow(cl_data, cl_common, cl_sc, cl_positive, cl_save);
        }
        if (qat->parsed()) return cmd_qat(qat_data, qat_common, qat_pre, qat_epochs, qat_batch);
        if (odlc->parsed())
            return cmd_odl(odl_data, odl_common, odl_backbone, odl_head, odl_strategy, odl_cap, odl_epochs,
                           odl_memory, odl_cache);
        if (sweep->parsed()) return cmd_depth_sweep(sw_data, sw_common, sw_depths, sw_epochs, sw_pre);
        if (diffc->parsed()) return cmd_diff(diff_a, diff_b);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
