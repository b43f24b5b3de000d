#include <doctest.h>

#include <cmath>
#include <cstring>

#include "bmi/nn.hpp"
#include "grad_check.hpp"

using namespace bmi;
using namespace bmi::nn;

namespace {

bool params_equal(const Model& a, const Model& b) {
    Model& ma = const_cast<Model&>(a);
    Model& mb = const_cast<Model&>(b);
    auto ra = param_refs(ma), rb = param_refs(mb);
    for (std::size_t i = 0; i < ra.size(); ++i) {
        if (ra[i].size != rb[i].size) return false;
        if (std::memcmp(ra[i].data, rb[i].data, ra[i].size * sizeof(float)) != 0) return false;
    }
    return true;
}

// independent double-precision re-computation of the eval-mode forward pass
std::vector<double> reference_forward(const Model& m, const dsp::TrialTensor& t) {
    const auto& c = m.cfg;
    const int C = c.n_channels, T = c.n_samples, F1 = c.temporal_filters, D = c.spatial_depth_multiplier;
    const int M = c.spatial_maps(), K1 = c.temporal_kernel, K2 = c.separable_kernel;
    const int T1 = c.pooled1(), T2 = c.pooled2();

    auto bn_eval = [&](double v, const BatchNormParams& bn, int j) {
        return bn.gamma[j] * (v - bn.running_mean[j]) / std::sqrt(bn.running_var[j] + c.bn_eps) + bn.beta[j];
    };

    // temporal conv + bn1
    std::vector<double> y1(static_cast<std::size_t>(F1) * C * T, 0.0);
    const int pl1 = (K1 - 1) / 2;
    for (int f = 0; f < F1; ++f)
        for (int ch = 0; ch < C; ++ch)
            for (int ti = 0; ti < T; ++ti) {
                double acc = 0.0;
                for (int k = 0; k < K1; ++k) {
                    const int src = ti + k - pl1;
                    if (src >= 0 && src < T) acc += m.w_temporal[f * K1 + k] * t.at(ch, src);
                }
                y1[(static_cast<std::size_t>(f) * C + ch) * T + ti] = bn_eval(acc, m.bn1, f);
            }

    // spatial depthwise conv + bn2 + relu + pool
    std::vector<double> p1(static_cast<std::size_t>(M) * T1, 0.0);
    for (int mm = 0; mm < M; ++mm) {
        const int f = mm / D;
        std::vector<double> row(T, 0.0);
        for (int ti = 0; ti < T; ++ti) {
            double acc = 0.0;
            for (int ch = 0; ch < C; ++ch)
                acc += m.w_spatial[mm * C + ch] * y1[(static_cast<std::size_t>(f) * C + ch) * T + ti];
            double v = bn_eval(acc, m.bn2, mm);
            row[ti] = v > 0.0 ? v : 0.0;
        }
        for (int u = 0; u < T1; ++u) {
            double s = 0.0;
            for (int j = 0; j < c.pool1; ++j) s += row[u * c.pool1 + j];
            p1[static_cast<std::size_t>(mm) * T1 + u] = s / c.pool1;
        }
    }

    // separable conv (depthwise then pointwise) + bn3 + relu + pool
    const int pl2 = (K2 - 1) / 2;
    std::vector<double> a3(static_cast<std::size_t>(M) * T1, 0.0);
    for (int mm = 0; mm < M; ++mm)
        for (int u = 0; u < T1; ++u) {
            double acc = 0.0;
            for (int k = 0; k < K2; ++k) {
                const int src = u + k - pl2;
                if (src >= 0 && src < T1) acc += m.w_sep_depth[mm * K2 + k] * p1[static_cast<std::size_t>(mm) * T1 + src];
            }
            a3[static_cast<std::size_t>(mm) * T1 + u] = acc;
        }
    std::vector<double> feat(static_cast<std::size_t>(M) * T2, 0.0);
    for (int mm = 0; mm < M; ++mm) {
        std::vector<double> row(T1, 0.0);
        for (int u = 0; u < T1; ++u) {
            double acc = 0.0;
            for (int j = 0; j < M; ++j) acc += m.w_sep_point[mm * M + j] * a3[static_cast<std::size_t>(j) * T1 + u];
            double v = bn_eval(acc, m.bn3, mm);
            row[u] = v > 0.0 ? v : 0.0;
        }
        for (int u = 0; u < T2; ++u) {
            double s = 0.0;
            for (int j = 0; j < c.pool2; ++j) s += row[u * c.pool2 + j];
            feat[static_cast<std::size_t>(mm) * T2 + u] = s / c.pool2;
        }
    }

    std::vector<double> logits(c.n_classes, 0.0);
    for (int cc = 0; cc < c.n_classes; ++cc) {
        double acc = m.b_dense[cc];
        for (int i = 0; i < c.feature_len(); ++i) acc += m.w_dense[cc * c.feature_len() + i] * feat[i];
        logits[cc] = acc;
    }
    return logits;
}

std::vector<dsp::TrialTensor> separable_toy(const ModelConfig& cfg, int n, Rng rng) {
    // class k puts a strong oscillation on channel k; trivially separable
    std::vector<dsp::TrialTensor> out(n);
    for (int i = 0; i < n; ++i) {
        auto& t = out[i];
        t.n_channels = cfg.n_channels;
        t.n_samples = cfg.n_samples;
        t.label = i % cfg.n_classes;
        t.samples.assign(static_cast<std::size_t>(cfg.n_channels) * cfg.n_samples, 0.0f);
        for (int s = 0; s < cfg.n_samples; ++s) {
            t.at(t.label, s) = static_cast<float>(3.0 * std::sin(0.7 * s) + 0.05 * rng.normal());
        }
        for (int ch = 0; ch < cfg.n_channels; ++ch)
            for (int s = 0; s < cfg.n_samples; ++s) t.at(ch, s) += static_cast<float>(0.05 * rng.normal());
    }
    return out;
}

TrialList ptrs(const std::vector<dsp::TrialTensor>& v) {
    TrialList out;
    for (const auto& t : v) out.push_back(&t);
    return out;
}

}  // namespace

TEST_CASE("model initialization is deterministic and correctly sized") {
    ModelConfig cfg;  // full-size defaults
    Model a = init_model(cfg, 42);
    Model b = init_model(cfg, 42);
    Model c = init_model(cfg, 43);
    CHECK(params_equal(a, b));
    CHECK(!params_equal(a, c));

    CHECK(cfg.param_count() == 7716);
    CHECK(cfg.param_count() >= 7000);
    CHECK(cfg.param_count() <= 8500);
    CHECK(cfg.feature_len() == 928);
    CHECK(cfg.pooled2() == 29);

    ModelConfig two = cfg;
    two.n_classes = 2;
    Model m2 = init_model(two, 1);
    CHECK(m2.w_dense.size() == 928u * 2u);
    CHECK(m2.b_dense.size() == 2u);

    ModelConfig bad;
    bad.pool1 = 4000;
    CHECK_THROWS_AS(init_model(bad, 1), ConfigError);
}

TEST_CASE("forward matches an independent scalar recomputation") {
    ModelConfig cfg = testutil::tiny_config(3);
    Model m = init_model(cfg, 7);

    // make batch-norm non-trivial
    Rng rng(99);
    for (BatchNormParams* bn : {&m.bn1, &m.bn2, &m.bn3}) {
        for (auto& v : bn->gamma) v = static_cast<float>(rng.uniform(0.5, 1.5));
        for (auto& v : bn->beta) v = static_cast<float>(rng.uniform(-0.3, 0.3));
        for (auto& v : bn->running_mean) v = static_cast<float>(rng.uniform(-0.2, 0.2));
        for (auto& v : bn->running_var) v = static_cast<float>(rng.uniform(0.5, 2.0));
    }
    for (auto& v : m.b_dense) v = static_cast<float>(rng.uniform(-0.2, 0.2));

    auto trials = testutil::random_trials(cfg, 3, rng.split("data"));
    for (const auto& t : trials) {
        const auto got = infer_logits(m, t);
        const auto want = reference_forward(m, t);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-4));
    }
}

TEST_CASE("forward shape contract and eval determinism") {
    ModelConfig cfg;
    cfg.n_classes = 2;
    Model m = init_model(cfg, 5);
    dsp::TrialTensor t;
    t.samples.assign(8 * 1900, 0.0f);
    Rng rng(3);
    for (auto& v : t.samples) v = static_cast<float>(rng.normal());

    Batch b;
    b.trials = {&t};
    b.labels = {0};
    ForwardCache cache;
    auto r1 = forward(m, b, false, cache);
    CHECK(r1.features.size() == 32u * 29u);
    auto r2 = forward(m, b, false, cache);
    CHECK(r1.logits == r2.logits);

    dsp::TrialTensor wrong = t;
    wrong.n_samples = 1000;
    wrong.samples.resize(8 * 1000);
    Batch wb;
    wb.trials = {&wrong};
    wb.labels = {0};
    CHECK_THROWS_AS(forward(m, wb, false, cache), ShapeError);
}

TEST_CASE("cross entropy values") {
    // uniform logits, C=4 -> ln 4
    std::vector<float> logits = {0.3f, 0.3f, 0.3f, 0.3f};
    CHECK(cross_entropy(logits, {2}, 4) == doctest::Approx(std::log(4.0)).epsilon(1e-6));

    // large margin -> loss approaches 0
    std::vector<float> sharp = {30.0f, 0.0f};
    CHECK(cross_entropy(sharp, {0}, 2) < 1e-9);

    // random batch vs a double-precision oracle
    Rng rng(17);
    const int B = 6, C = 4;
    std::vector<float> z(B * C);
    std::vector<int> labels(B);
    for (auto& v : z) v = static_cast<float>(rng.uniform(-3, 3));
    for (auto& l : labels) l = static_cast<int>(rng.below(C));
    double want = 0.0;
    for (int i = 0; i < B; ++i) {
        double mx = -1e30;
        for (int c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(z[i * C + c]));
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += std::exp(static_cast<double>(z[i * C + c]) - mx);
        want += -(static_cast<double>(z[i * C + labels[i]]) - mx - std::log(s));
    }
    want /= B;
    CHECK(cross_entropy(z, labels, C) == doctest::Approx(want).epsilon(1e-6));

    // softmax rows sum to one
    std::vector<float> probs;
    softmax_rows(z, C, probs);
    for (int i = 0; i < B; ++i) {
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += probs[i * C + c];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    for (bool train_mode : {true, false}) {
        for (int inst = 0; inst < 3; ++inst) {
            Rng rng(100 + inst);
            ModelConfig cfg = testutil::tiny_config(2 + inst % 2);
            Model m = init_model(cfg, 1000 + inst);
            auto trials = testutil::random_trials(cfg, 4, rng);
            Batch b;
            for (auto& t : trials) {
                b.trials.push_back(&t);
                b.labels.push_back(t.label);
            }

            ForwardCache cache;
            forward(m, b, train_mode, cache, &rng);
            std::vector<float> dlogits;
            cross_entropy(cache.logits, b.labels, cfg.n_classes, &dlogits);
            ModelGrads g = backward(m, cache, dlogits);

            auto rep = testutil::check_model_grads(m, g, b, train_mode);
            INFO("train_mode=", train_mode, " instance=", inst, " worst=", rep.worst_where, " rel=", rep.worst_rel);
            CHECK(rep.failed == 0);
            CHECK(rep.checked > 100);
        }
    }
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
    ModelConfig cfg = testutil::tiny_config();
    Model m = init_model(cfg, 3);
    Rng rng(4);
    auto trials = testutil::random_trials(cfg, 2, rng);
    Batch b;
    for (auto& t : trials) {
        b.trials.push_back(&t);
        b.labels.push_back(t.label);
    }
    ForwardCache cache;
    forward(m, b, true, cache, &rng);
    std::vector<float> dlogits(b.size() * cfg.n_classes, 0.0f);
    ModelGrads g = backward(m, cache, dlogits);
    for (auto& ref : grad_refs(g, m))
        for (std::size_t i = 0; i < ref.size; ++i) CHECK(ref.data[i] == 0.0f);
}

TEST_CASE("depth restriction masks gradients outside the head") {
    ModelConfig cfg = testutil::tiny_config();
    Model m = init_model(cfg, 3);
    Rng rng(4);
    auto trials = testutil::random_trials(cfg, 2, rng);
    Batch b;
    for (auto& t : trials) {
        b.trials.push_back(&t);
        b.labels.push_back(t.label);
    }
    ForwardCache cache;
    forward(m, b, true, cache, &rng);
    std::vector<float> dlogits;
    cross_entropy(cache.logits, b.labels, cfg.n_classes, &dlogits);
    ModelGrads g = backward(m, cache, dlogits, /*depth=*/1);

    double head_mag = 0.0, rest_mag = 0.0;
    for (auto& ref : grad_refs(g, m)) {
        double s = 0.0;
        for (std::size_t i = 0; i < ref.size; ++i) s += std::abs(ref.data[i]);
        if (ref.group == ParamGroup::DenseHead)
            head_mag += s;
        else
            rest_mag += s;
    }
    CHECK(head_mag > 0.0);
    CHECK(rest_mag == 0.0);
}

TEST_CASE("adam update behaviour") {
    ModelConfig cfg = testutil::tiny_config();
    Model m = init_model(cfg, 9);
    Model before = m;
    AdamState st = AdamState::make(m);
    ModelGrads g;
    g.resize_like(m);

    // zero gradients leave parameters unchanged
    adam_step(st, m, g, 6);
    CHECK(params_equal(m, before));

    // first step with constant gradient moves each parameter by ~lr
    for (auto& ref : grad_refs(g, m))
        for (std::size_t i = 0; i < ref.size; ++i) ref.data[i] = 0.5f;
    AdamState st2 = AdamState::make(m);
    Model m2 = before;
    adam_step(st2, m2, g, 6);
    auto pa = param_refs(before);
    auto pb = param_refs(m2);
    for (std::size_t a = 0; a < pa.size(); ++a)
        for (std::size_t i = 0; i < pa[a].size; ++i) {
            const double delta = std::abs(pa[a].data[i] - pb[a].data[i]);
            CHECK(delta == doctest::Approx(st2.lr).epsilon(1e-5));
        }
}

TEST_CASE("training learns a separable toy problem deterministically") {
    ModelConfig cfg = testutil::tiny_config(2);
    cfg.n_channels = 4;
    cfg.n_samples = 64;
    cfg.temporal_kernel = 9;
    Model m = init_model(cfg, 11);
    Model m_copy = m;

    auto data = separable_toy(cfg, 24, Rng(5));
    auto list = ptrs(data);

    // zero epochs: untouched
    TrainOptions opts;
    opts.epochs = 0;
    opts.batch_size = 4;
    auto curve0 = train(m, list, opts, Rng(77));
    CHECK(curve0.empty());
    CHECK(params_equal(m, m_copy));

    opts.epochs = 40;
    auto curve = train(m, list, opts, Rng(77));
    CHECK(curve.size() == 40);
    CHECK(curve.back() < curve.front());
    CHECK(evaluate(m, list).accuracy_pct == doctest::Approx(100.0));

    // identical seeds, identical trajectory
    Model m3 = m_copy;
    auto curve3 = train(m3, list, opts, Rng(77));
    CHECK(params_equal(m, m3));
    CHECK(curve == curve3);

    CHECK_THROWS_AS(train(m, TrialList{}, opts, Rng(1)), DataError);
}

TEST_CASE("evaluate: fixed-prediction models and confusion counts") {
    ModelConfig cfg = testutil::tiny_config(2);
    Model m = init_model(cfg, 1);
    // silence the network: zero weights, bias prefers class 0
    Model& mm = m;
    for (auto& ref : param_refs(mm))
        std::fill(ref.data, ref.data + ref.size, 0.0f);
    m.b_dense = {1.0f, 0.0f};
    for (auto& v : m.bn1.gamma) v = 1.0f;
    for (auto& v : m.bn2.gamma) v = 1.0f;
    for (auto& v : m.bn3.gamma) v = 1.0f;

    auto data = testutil::random_trials(cfg, 40, Rng(2));
    for (int i = 0; i < 40; ++i) data[i].label = i % 2;  // balanced
    auto res = evaluate(m, ptrs(data));
    CHECK(res.accuracy_pct == doctest::Approx(50.0));
    CHECK(res.confusion.total() == 40);
    long sum = 0;
    for (long c : res.confusion.counts) sum += c;
    CHECK(sum == 40);
}

TEST_CASE("five-fold CV: partition, chance level, separable data") {
    ModelConfig cfg = testutil::tiny_config(4);
    cfg.n_channels = 4;
    cfg.n_samples = 64;
    cfg.temporal_kernel = 9;

    // random labels: accuracy should hover at chance (25%)
    auto noise = testutil::random_trials(cfg, 100, Rng(21));
    std::vector<int> rand_labels(noise.size());
    Rng lr(22);
    for (auto& l : rand_labels) l = static_cast<int>(lr.below(4));
    auto cv = five_fold_cv(ptrs(noise), rand_labels, cfg, 8, Rng(23));
    CHECK(cv.fold_pct.size() == 5);
    CHECK(cv.fold_of.size() == noise.size());
    // every trial lands in exactly one fold, folds are balanced within one
    std::vector<int> fold_counts(5, 0);
    for (int f : cv.fold_of) {
        REQUIRE(f >= 0);
        REQUIRE(f < 5);
        fold_counts[f]++;
    }
    for (int c : fold_counts) CHECK(c == 20);
    CHECK(cv.mean_pct > 15.0);
    CHECK(cv.mean_pct < 35.0);

    // strongly separated classes
    ModelConfig cfg2 = cfg;
    cfg2.n_classes = 4;
    auto sep = separable_toy(cfg2, 40, Rng(31));
    std::vector<int> lab(sep.size());
    for (std::size_t i = 0; i < sep.size(); ++i) lab[i] = sep[i].label;
    auto cv2 = five_fold_cv(ptrs(sep), lab, cfg2, 30, Rng(33));
    CHECK(cv2.mean_pct > 90.0);

    // a class with fewer members than folds forces the unstratified fallback
    std::vector<int> sparse = lab;
    sparse[0] = 3;
    for (std::size_t i = 1; i < sparse.size(); ++i)
        if (sparse[i] == 3) sparse[i] = 0;
    auto cv3 = five_fold_cv(ptrs(sep), sparse, cfg2, 2, Rng(35));
    CHECK(!cv3.stratified);
    CHECK(cv3.fold_pct.size() == 5);
}

TEST_CASE("checkpoint round trip") {
    ModelConfig cfg = testutil::tiny_config(3);
    Model m = init_model(cfg, 123);
    Rng rng(9);
    for (auto& v : m.bn2.running_mean) v = static_cast<float>(rng.normal());

    const std::string path = "test_model_ckpt.bin";
    save_model(m, path);
    Model r = load_model(path);
    CHECK(params_equal(m, r));
    CHECK(r.cfg.n_classes == 3);
    CHECK(r.bn2.running_mean == m.bn2.running_mean);
    std::remove(path.c_str());

    CHECK_THROWS_AS(load_model("does_not_exist.bin"), LoadError);
}
