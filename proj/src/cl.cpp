#include "bmi/cl.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace bmi::cl {

using nn::Model;
using nn::ModelGrads;

// ---------------------------------------------------------------
// Splits
// ---------------------------------------------------------------

SessionSplit split_session(const Session& session, const SplitSpec& spec) {
    if (session.size() < 5) throw DataError("session too small to split (need >= 5 trials)");
    if (!spec.chronological) throw ConfigError("only chronological splits are supported");
    const std::size_t boundary = static_cast<std::size_t>(std::floor(spec.train_fraction * session.size()));
    if (boundary == 0 || boundary == session.size()) throw ParameterError("degenerate train fraction");
    SessionSplit out;
    for (std::size_t i = 0; i < session.size(); ++i) {
        (i < boundary ? out.train : out.test).push_back(&session[i]);
    }
    return out;
}

// ---------------------------------------------------------------
// Strategy plumbing
// ---------------------------------------------------------------

std::string to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::NaiveTL: return "naive_tl";
        case StrategyKind::ER: return "er";
        case StrategyKind::LwF: return "lwf";
        case StrategyKind::EWC: return "ewc";
        case StrategyKind::Joint: return "joint";
    }
    return "?";
}

StrategyKind strategy_from_string(const std::string& s) {
    if (s == "naive_tl" || s == "naive" || s == "tl") return StrategyKind::NaiveTL;
    if (s == "er") return StrategyKind::ER;
    if (s == "lwf") return StrategyKind::LwF;
    if (s == "ewc") return StrategyKind::EWC;
    if (s == "joint") return StrategyKind::Joint;
    throw ConfigError("unknown strategy: " + s);
}

void StrategyConfig::validate() const {
    if (lwf_lambda_o < 0 || lwf_temperature <= 0) throw ConfigError("bad distillation hyperparameters");
    if (ewc_lambda < 0) throw ConfigError("bad anchoring strength");
    if (epochs < 0 || pretrain_epochs < 0 || batch_size < 1) throw ConfigError("bad schedule");
    if (depth < 1 || depth > 6) throw ConfigError("adaptation depth must be 1..6");
}

// ---------------------------------------------------------------
// Losses
// ---------------------------------------------------------------

double lwf_loss(const std::vector<float>& new_logits, const std::vector<float>& old_logits,
                const std::vector<int>& labels, int n_classes, double lambda_o, double temperature, bool kl_form,
                std::vector<float>* dlogits) {
    if (new_logits.size() != old_logits.size()) throw ShapeError("old/new logits size mismatch");
    const int B = static_cast<int>(labels.size());
    double loss = nn::cross_entropy(new_logits, labels, n_classes, dlogits);
    if (lambda_o == 0.0) return loss;

    std::vector<float> p_old, p_new;
    std::vector<float> scaled_old(old_logits.size()), scaled_new(new_logits.size());
    const float inv_t = static_cast<float>(1.0 / temperature);
    for (std::size_t i = 0; i < old_logits.size(); ++i) scaled_old[i] = old_logits[i] * inv_t;
    for (std::size_t i = 0; i < new_logits.size(); ++i) scaled_new[i] = new_logits[i] * inv_t;
    nn::softmax_rows(scaled_old, n_classes, p_old);
    nn::softmax_rows(scaled_new, n_classes, p_new);

    double distill = 0.0;
    for (int i = 0; i < B; ++i) {
        const float* po = &p_old[static_cast<std::size_t>(i) * n_classes];
        const float* pn = &p_new[static_cast<std::size_t>(i) * n_classes];
        for (int c = 0; c < n_classes; ++c) {
            const double q = std::max(1e-30, static_cast<double>(pn[c]));
            distill += -static_cast<double>(po[c]) * std::log(q);
            if (kl_form) {
                const double p = std::max(1e-30, static_cast<double>(po[c]));
                distill += static_cast<double>(po[c]) * std::log(p);
            }
        }
        if (dlogits) {
            float* d = &(*dlogits)[static_cast<std::size_t>(i) * n_classes];
            for (int c = 0; c < n_classes; ++c)
                d[c] += static_cast<float>(lambda_o * inv_t * (pn[c] - po[c]) / B);
        }
    }
    return loss + lambda_o * distill / B;
}

FisherDiag fisher_diag(const Model& m, const TrialList& data) {
    if (data.empty()) throw DataError("empty data set for the information matrix");
    Model& mm = const_cast<Model&>(m);
    auto prefs = nn::param_refs(mm);
    std::size_t total = 0;
    for (const auto& r : prefs) total += r.size;

    FisherDiag fd;
    fd.fisher.assign(total, 0.0f);
    fd.anchor.resize(total);
    {
        std::size_t off = 0;
        for (const auto& r : prefs) {
            std::memcpy(fd.anchor.data() + off, r.data, r.size * sizeof(float));
            off += r.size;
        }
    }

    nn::ForwardCache cache;
    std::vector<float> dlogits;
    for (const TrialTensor* t : data) {
        nn::Batch b;
        b.trials = {t};
        b.labels = {0};
        nn::forward(m, b, false, cache);
        // the model's own prediction
        int arg = 0;
        for (int c = 1; c < m.cfg.n_classes; ++c)
            if (cache.logits[c] > cache.logits[arg]) arg = c;
        b.labels = {arg};
        nn::cross_entropy(cache.logits, b.labels, m.cfg.n_classes, &dlogits);
        ModelGrads g = nn::backward(m, cache, dlogits);
        auto grefs = nn::grad_refs(g, mm);
        std::size_t off = 0;
        for (const auto& r : grefs) {
            for (std::size_t i = 0; i < r.size; ++i) fd.fisher[off + i] += r.data[i] * r.data[i];
            off += r.size;
        }
    }
    const float inv = 1.0f / static_cast<float>(data.size());
    for (auto& v : fd.fisher) v *= inv;
    return fd;
}

double ewc_penalty(const Model& m, const FisherDiag& fd, double lambda, ModelGrads* grads) {
    Model& mm = const_cast<Model&>(m);
    auto prefs = nn::param_refs(mm);
    double penalty = 0.0;
    std::size_t off = 0;
    for (std::size_t a = 0; a < prefs.size(); ++a) {
        const auto& r = prefs[a];
        for (std::size_t i = 0; i < r.size; ++i) {
            const double diff = static_cast<double>(r.data[i]) - fd.anchor[off + i];
            penalty += fd.fisher[off + i] * diff * diff;
        }
        off += r.size;
    }
    if (grads) {
        ModelGrads& g = *grads;
        auto grefs = nn::grad_refs(g, mm);
        off = 0;
        for (std::size_t a = 0; a < prefs.size(); ++a) {
            const auto& r = prefs[a];
            for (std::size_t i = 0; i < r.size; ++i) {
                const float diff = r.data[i] - fd.anchor[off + i];
                grefs[a].data[i] += static_cast<float>(lambda) * fd.fisher[off + i] * diff;
            }
            off += r.size;
        }
    }
    return 0.5 * lambda * penalty;
}

double ewc_loss(const std::vector<float>& logits, const std::vector<int>& labels, int n_classes, const Model& m,
                const FisherDiag& fd, double lambda, std::vector<float>* dlogits) {
    const double ce = nn::cross_entropy(logits, labels, n_classes, dlogits);
    if (lambda == 0.0) return ce;
    return ce + ewc_penalty(m, fd, lambda, nullptr);
}

// ---------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------

BinaryMetrics binary_metrics(const nn::ConfusionMatrix& cm, int positive_class) {
    BinaryMetrics out;
    if (cm.n_classes != 2) return out;
    const int p = positive_class, n = 1 - positive_class;
    const double tp = static_cast<double>(cm.at(p, p));
    const double fn = static_cast<double>(cm.at(p, n));
    const double fp = static_cast<double>(cm.at(n, p));
    const double tn = static_cast<double>(cm.at(n, n));
    if (tp + fp > 0) out.precision_pct = 100.0 * tp / (tp + fp);
    if (tp + fn > 0) out.recall_pct = 100.0 * tp / (tp + fn);
    if (tn + fp > 0) out.specificity_pct = 100.0 * tn / (tn + fp);
    return out;
}

namespace {

std::optional<double> mean_defined(const std::vector<std::optional<double>>& vals) {
    double s = 0.0;
    int n = 0;
    for (const auto& v : vals)
        if (v) {
            s += *v;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return s / n;
}

}  // namespace

PhaseMetrics metrics(std::vector<nn::ConfusionMatrix> confusions, int ns, int positive_class) {
    if (confusions.empty() || static_cast<int>(confusions.size()) != ns)
        throw ParameterError("metrics needs one confusion per session 1..ns");
    PhaseMetrics pm;
    pm.ns = ns;
    pm.per_session = std::move(confusions);

    std::vector<std::optional<double>> pres, recs, spes;
    for (const auto& cm : pm.per_session) {
        pm.acc_per_session.push_back(cm.accuracy_pct());
        const BinaryMetrics bm = binary_metrics(cm, positive_class);
        pres.push_back(bm.precision_pct);
        recs.push_back(bm.recall_pct);
        spes.push_back(bm.specificity_pct);
    }
    pm.acc_avg = mean_of(pm.acc_per_session);
    pm.acc_new = pm.acc_per_session.back();
    pm.pre_avg = mean_defined(pres);
    pm.rec_avg = mean_defined(recs);
    pm.spe_avg = mean_defined(spes);
    pm.pre_new = pres.back();
    pm.rec_new = recs.back();
    pm.spe_new = spes.back();
    return pm;
}

// ---------------------------------------------------------------
// Workflows
// ---------------------------------------------------------------

namespace {

// distillation against a frozen snapshot of the previous phase's model
class LwfHook : public nn::LossHooks {
public:
    LwfHook(const Model& old_model, double lambda_o, double temperature, bool kl)
        : old_(old_model), lambda_o_(lambda_o), temperature_(temperature), kl_(kl) {}

    double logits_loss(const std::vector<float>& logits, const std::vector<int>& labels, int n_classes,
                       std::vector<float>& dlogits, const nn::Batch& batch) override {
        nn::ForwardCache c;
        auto old_out = nn::forward(old_, batch, false, c);
        return lwf_loss(logits, old_out.logits, labels, n_classes, lambda_o_, temperature_, kl_, &dlogits);
    }

private:
    const Model& old_;
    double lambda_o_, temperature_;
    bool kl_;
};

// quadratic anchoring to every completed phase (or a single accumulated anchor)
class EwcHook : public nn::LossHooks {
public:
    EwcHook(const std::vector<FisherDiag>& fishers, double lambda) : fishers_(fishers), lambda_(lambda) {}

    double logits_loss(const std::vector<float>& logits, const std::vector<int>& labels, int n_classes,
                       std::vector<float>& dlogits, const nn::Batch&) override {
        return nn::cross_entropy(logits, labels, n_classes, &dlogits);
    }

    double param_penalty(const Model& m, ModelGrads& g) override {
        double p = 0.0;
        for (const auto& fd : fishers_) p += ewc_penalty(m, fd, lambda_, &g);
        return p;
    }

private:
    const std::vector<FisherDiag>& fishers_;
    double lambda_;
};

void accumulate_online(FisherDiag& into, const FisherDiag& add) {
    if (into.fisher.empty()) {
        into = add;
        return;
    }
    for (std::size_t i = 0; i < into.fisher.size(); ++i) into.fisher[i] += add.fisher[i];
    into.anchor = add.anchor;  // anchor at the newest optimum
}

}  // namespace

nn::Model pretrain(const TrialList& session1_train, const nn::ModelConfig& cfg, const StrategyConfig& sc,
                   Rng rng) {
    Model m = nn::init_model(cfg, rng.split("init").next_u64());
    nn::TrainOptions opts;
    opts.epochs = sc.pretrain_epochs;
    opts.batch_size = sc.batch_size;
    opts.lr = sc.lr;
    nn::train(m, session1_train, opts, rng.split("phase", 1));
    return m;
}

WorkflowResult run_cl_workflow(const SessionSequence& seq, const WorkflowConfig& cfg) {
    if (seq.size() < 2) throw DataError("need at least two sessions");
    cfg.strategy.validate();
    const int n_sessions = static_cast<int>(seq.size());
    const StrategyConfig& sc = cfg.strategy;
    const StrategyKind kind = sc.kind;
    Rng rng(cfg.seed);

    std::vector<SessionSplit> splits;
    splits.reserve(seq.size());
    for (const auto& s : seq) splits.push_back(split_session(s, cfg.split));

    WorkflowResult out;
    out.report.task = kind == StrategyKind::NaiveTL ? "tl_workflow" : "cl_workflow";
    out.report.strategy = to_string(kind);
    out.report.seed = cfg.seed;
    out.report.n_sessions = n_sessions;
    out.report.positive_class = cfg.positive_class;

    // phase 1: pretraining on session 1
    Model model = pretrain(splits[0].train, cfg.model, sc, rng);

    auto eval_phase = [&](int ns) {
        std::vector<nn::ConfusionMatrix> cms;
        for (int s = 0; s < ns; ++s) cms.push_back(nn::evaluate(model, splits[s].test).confusion);
        out.report.phases.push_back(metrics(std::move(cms), ns, cfg.positive_class));
    };
    eval_phase(1);

    // strategy state
    const bool use_er = kind == StrategyKind::ER && sc.er_capacity > 0;
    ReplayBuffer<TrialTensor> buffer(sc.er_capacity, rng.split("reservoir"));
    if (use_er)
        for (const TrialTensor* t : splits[0].train) buffer.offer(*t);

    const bool use_lwf = kind == StrategyKind::LwF && sc.lwf_lambda_o != 0.0;
    const bool use_ewc = kind == StrategyKind::EWC && sc.ewc_lambda != 0.0;
    Model lwf_snapshot;
    if (use_lwf) lwf_snapshot = model;
    std::vector<FisherDiag> fishers;
    FisherDiag online_fisher;
    if (use_ewc) {
        FisherDiag fd = fisher_diag(model, splits[0].train);
        if (sc.ewc_online) {
            accumulate_online(online_fisher, fd);
            fishers.assign(1, online_fisher);
        } else {
            fishers.push_back(std::move(fd));
        }
    }

    for (int ns = 2; ns <= n_sessions; ++ns) {
        const SessionSplit& cur = splits[ns - 1];

        // assemble the phase training set
        TrialList train_list;
        if (kind == StrategyKind::Joint) {
            for (int s = 0; s < ns; ++s)
                for (const TrialTensor* t : splits[s].train) train_list.push_back(t);
        } else if (use_er) {
            for (const TrialTensor& t : buffer.items()) train_list.push_back(&t);
            for (const TrialTensor* t : cur.train) train_list.push_back(t);
        } else {
            train_list = cur.train;
        }

        LwfHook lwf_hook(lwf_snapshot, sc.lwf_lambda_o, sc.lwf_temperature, sc.lwf_kl_form);
        EwcHook ewc_hook(fishers, sc.ewc_lambda);
        nn::TrainOptions opts;
        opts.epochs = sc.epochs;
        opts.batch_size = sc.batch_size;
        opts.lr = sc.lr;
        opts.depth = sc.depth;
        if (use_lwf) opts.loss = &lwf_hook;
        if (use_ewc) opts.loss = &ewc_hook;

        nn::train(model, train_list, opts, rng.split("phase", ns));

        // post-phase strategy updates
        if (use_er)
            for (const TrialTensor* t : cur.train) buffer.offer(*t);
        if (use_lwf) lwf_snapshot = model;
        if (use_ewc) {
            FisherDiag fd = fisher_diag(model, cur.train);
            if (sc.ewc_online) {
                accumulate_online(online_fisher, fd);
                fishers.assign(1, online_fisher);
            } else {
                fishers.push_back(std::move(fd));
            }
        }

        eval_phase(ns);
    }

    out.final_model = std::move(model);
    return out;
}

WorkflowResult run_tl_workflow(const SessionSequence& seq, WorkflowConfig cfg) {
    cfg.strategy.kind = StrategyKind::NaiveTL;
    return run_cl_workflow(seq, cfg);
}

DepthSweepResult adaptation_depth_sweep(const SessionSequence& seq, const std::vector<int>& depths,
                                        WorkflowConfig cfg, const std::vector<std::uint64_t>& seeds) {
    if (depths.empty() || seeds.empty()) throw ParameterError("depth sweep needs depths and seeds");
    const int phases = static_cast<int>(seq.size()) - 1;

    DepthSweepResult res;
    res.depths = depths;
    res.acc_new.assign(depths.size(), std::vector<std::vector<double>>(phases));
    res.mean.assign(depths.size(), std::vector<double>(phases, 0.0));
    res.stddev.assign(depths.size(), std::vector<double>(phases, 0.0));

    for (std::size_t di = 0; di < depths.size(); ++di) {
        if (depths[di] < 1 || depths[di] > 6) throw ParameterError("adaptation depth must be 1..6");
        for (std::uint64_t seed : seeds) {
            WorkflowConfig c = cfg;
            c.seed = seed;
            c.strategy.kind = StrategyKind::NaiveTL;
            c.strategy.depth = depths[di];
            WorkflowResult r = run_cl_workflow(seq, c);
            for (int p = 0; p < phases; ++p) res.acc_new[di][p].push_back(r.report.phases[p + 1].acc_new);
        }
        for (int p = 0; p < phases; ++p) {
            res.mean[di][p] = mean_of(res.acc_new[di][p]);
            res.stddev[di][p] = stddev_of(res.acc_new[di][p]);
        }
    }
    return res;
}

}  // namespace bmi::cl
