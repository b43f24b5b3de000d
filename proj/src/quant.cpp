#include "bmi/quant.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "bmi/io_util.hpp"

namespace bmi::quant {

namespace {

constexpr float kLn2 = 0.69314718055994530942f;
constexpr std::uint32_t kQuantMagic = 0x51494D42;  // "BMIQ"
constexpr std::uint32_t kQuantVersion = 1;

inline float pow2_scale(float log2_t) {
    return std::exp2f(std::ceil(log2_t)) / 128.0f;
}

}  // namespace

// ---------------------------------------------------------------
// Quantizer
// ---------------------------------------------------------------

void Quantizer::init(std::size_t channels, float threshold) {
    log2_t.assign(channels, std::log2(std::max(threshold, 1e-3f)));
    m.assign(channels, 0.0f);
    v.assign(channels, 0.0f);
    grad.assign(channels, 0.0f);
    step = 0;
}

float Quantizer::scale(std::size_t channel) const { return pow2_scale(log2_t[channel]); }

ClipBounds Quantizer::bounds() const {
    ClipBounds b;
    b.trainable = trainable;
    for (float lt : log2_t) {
        const float t = std::exp2f(lt);
        b.lower.push_back(-t);
        b.upper.push_back(t);
    }
    return b;
}

float fake_quant_value(float x, float scale) {
    const float v = x / scale;
    const float q = std::clamp(std::rintf(v), -128.0f, 127.0f);
    return q * scale;
}

void fake_quant(const std::vector<float>& x, const Quantizer& q, std::vector<float>& out) {
    out.resize(x.size());
    const std::size_t channels = q.log2_t.size();
    const std::size_t per = x.size() / channels;
    for (std::size_t c = 0; c < channels; ++c) {
        const float s = q.scale(c);
        for (std::size_t i = c * per; i < (c + 1) * per; ++i) out[i] = fake_quant_value(x[i], s);
    }
}

QatState init_clip_bounds(const Model& m, const QatConfig& cfg) {
    QatState qs;
    qs.cfg = cfg;

    auto init_w = [](Quantizer& q, const std::vector<float>& w, std::size_t channels) {
        q.log2_t.clear();
        const std::size_t per = w.size() / channels;
        std::vector<float> tmp;
        for (std::size_t c = 0; c < channels; ++c) {
            float mx = 0.0f;
            for (std::size_t i = c * per; i < (c + 1) * per; ++i) mx = std::max(mx, std::abs(w[i]));
            tmp.push_back(mx);
        }
        q.init(channels, 1.0f);
        for (std::size_t c = 0; c < channels; ++c)
            q.log2_t[c] = std::log2(std::max(tmp[c], 1e-3f));  // dead-channel guard
    };

    const auto& c = m.cfg;
    init_w(qs.wq(WeightId::Temporal), m.w_temporal, c.temporal_filters);
    init_w(qs.wq(WeightId::Spatial), m.w_spatial, c.spatial_maps());
    init_w(qs.wq(WeightId::SepDepth), m.w_sep_depth, c.spatial_maps());
    init_w(qs.wq(WeightId::SepPoint), m.w_sep_point, c.spatial_maps());
    init_w(qs.wq(WeightId::Dense), m.w_dense, c.n_classes);

    for (int a = 0; a < 7; ++a) qs.activations[a].init(1, 1.0f);
    qs.aq(ActId::Input).trainable = cfg.train_input_threshold;
    return qs;
}

// ---------------------------------------------------------------
// FakeQuantContext
// ---------------------------------------------------------------

const std::vector<float>& FakeQuantContext::fq_weights(WeightId id, const std::vector<float>& w) {
    if (id == WeightId::Dense && !state_.cfg.quantize_head) return w;
    fake_quant(w, state_.wq(id), w_buf_[static_cast<int>(id)]);
    return w_buf_[static_cast<int>(id)];
}

void FakeQuantContext::fq_activation(ActId id, std::vector<float>& x) {
    act_pre_[static_cast<int>(id)] = x;
    const Quantizer& q = state_.aq(id);
    const float s = q.scale();
    for (auto& v : x) v = fake_quant_value(v, s);
}

namespace {

// straight-through mask plus the learned-threshold gradient
void quantizer_backward(const std::vector<float>& pre, Quantizer& q, std::vector<float>& dx) {
    const std::size_t channels = q.log2_t.size();
    const std::size_t per = pre.size() / channels;
    for (std::size_t c = 0; c < channels; ++c) {
        const float s = q.scale(c);
        double gt = 0.0;
        for (std::size_t i = c * per; i < (c + 1) * per; ++i) {
            const float v = pre[i] / s;
            if (v < -128.0f) {
                gt += static_cast<double>(dx[i]) * (-128.0);
                dx[i] = 0.0f;
            } else if (v > 127.0f) {
                gt += static_cast<double>(dx[i]) * 127.0;
                dx[i] = 0.0f;
            } else {
                gt += static_cast<double>(dx[i]) * (std::rintf(v) - v);
                // gradient w.r.t. x passes through unchanged
            }
        }
        if (q.trainable) q.grad[c] += static_cast<float>(gt * s * kLn2);
    }
}

}  // namespace

void FakeQuantContext::bw_weights(WeightId id, const std::vector<float>& w, std::vector<float>& dw) {
    if (id == WeightId::Dense && !state_.cfg.quantize_head) return;
    quantizer_backward(w, state_.wq(id), dw);
}

void FakeQuantContext::bw_activation(ActId id, std::vector<float>& dx) {
    quantizer_backward(act_pre_[static_cast<int>(id)], state_.aq(id), dx);
}

void FakeQuantContext::on_step(float) {
    const float lr = state_.cfg.threshold_lr;
    for (Quantizer* q : {&state_.weights[0], &state_.weights[1], &state_.weights[2], &state_.weights[3],
                         &state_.weights[4], &state_.activations[0], &state_.activations[1],
                         &state_.activations[2], &state_.activations[3], &state_.activations[4],
                         &state_.activations[5], &state_.activations[6]}) {
        if (!q->trainable) {
            std::fill(q->grad.begin(), q->grad.end(), 0.0f);
            continue;
        }
        q->step += 1;
        const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(q->step));
        const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(q->step));
        for (std::size_t i = 0; i < q->log2_t.size(); ++i) {
            float& mm = q->m[i];
            float& vv = q->v[i];
            const float g = q->grad[i];
            mm = 0.9f * mm + 0.1f * g;
            vv = 0.999f * vv + 0.001f * g * g;
            q->log2_t[i] -= static_cast<float>(lr * (mm / bc1) / (std::sqrt(vv / bc2) + 1e-8));
            q->grad[i] = 0.0f;
        }
    }
}

std::vector<double> qat_train(Model& m, QatState& qs, const nn::TrialList& data, const nn::TrainOptions& opts,
                              Rng rng) {
    FakeQuantContext ctx(qs, m, true);
    nn::TrainOptions o = opts;
    o.qat = &ctx;
    return nn::train(m, data, o, rng);
}

// ---------------------------------------------------------------
// Integerization
// ---------------------------------------------------------------

namespace {

void derive_multiplier(double f, std::int32_t& mult, int& shift) {
    if (!(f > 0.0) || !std::isfinite(f)) throw ConfigError("non-positive requantization factor");
    if (f >= 2147483648.0) throw ConfigError("requantization factor overflow (multiplier would exceed int32)");
    int e = static_cast<int>(std::floor(std::log2(f)));
    int s = 30 - e;
    if (s > 62) s = 62;
    if (s < 0) throw ConfigError("requantization factor overflow");
    long long m = std::llround(f * std::exp2(static_cast<double>(s)));
    if (m >= (1LL << 31)) {
        m >>= 1;
        s -= 1;
        if (s < 0) throw ConfigError("requantization factor overflow");
    }
    if (m <= 0) throw ConfigError("requantization factor underflow");
    mult = static_cast<std::int32_t>(m);
    shift = s;
}

// Round to nearest with ties to even, matching the fake-quant grid rounding.
// Power-of-two scale ratios make exact half-step ties common (every pool stage
// hits them at density 1/P), so the tie rule must agree across both paths.
inline std::int8_t requant_one(std::int64_t acc, std::int64_t bias, std::int32_t mult, int shift, bool relu) {
    std::int64_t v = acc * mult + bias;
    if (shift > 0) {
        const std::int64_t half = std::int64_t(1) << (shift - 1);
        const std::int64_t mask = (std::int64_t(1) << shift) - 1;
        const std::int64_t rem = v & mask;  // arithmetic shift gives floor semantics
        v = (v + half) >> shift;
        if (rem == half) v -= (v & 1);
    }
    const std::int64_t lo = relu ? 0 : -128;
    return static_cast<std::int8_t>(std::clamp<std::int64_t>(v, lo, 127));
}

std::vector<std::int8_t> quantize_weights(const std::vector<float>& w, const Quantizer& q,
                                          const std::vector<float>& fold_sign) {
    const std::size_t channels = q.log2_t.size();
    const std::size_t per = w.size() / channels;
    std::vector<std::int8_t> out(w.size());
    for (std::size_t c = 0; c < channels; ++c) {
        const float s = q.scale(c);
        const float sign = fold_sign.empty() ? 1.0f : fold_sign[c];
        for (std::size_t i = c * per; i < (c + 1) * per; ++i) {
            float v = std::clamp(std::rintf(w[i] / s), -128.0f, 127.0f) * sign;
            out[i] = static_cast<std::int8_t>(std::clamp(v, -128.0f, 127.0f));
        }
    }
    return out;
}

struct BnFold {
    std::vector<float> gain;  // gamma / sqrt(var + eps), signed
    std::vector<float> bias;  // beta - mean * gain
};

BnFold fold_bn(const nn::BatchNormParams& bn, float eps) {
    BnFold f;
    for (std::size_t i = 0; i < bn.gamma.size(); ++i) {
        const float g = bn.gamma[i] / std::sqrt(bn.running_var[i] + eps);
        f.gain.push_back(g);
        f.bias.push_back(bn.beta[i] - bn.running_mean[i] * g);
    }
    return f;
}

}  // namespace

QuantizedModel integerize(const Model& m, const QatState& qs, const nn::TrialList& calibration) {
    const auto& c = m.cfg;
    QuantizedModel qm;
    qm.cfg = c;
    qm.int8_head = qs.cfg.quantize_head;

    qm.s_in = qs.aq(ActId::Input).scale();
    qm.s1 = qs.aq(ActId::PostBn1).scale();
    qm.s2r = qs.aq(ActId::PostRelu1).scale();
    qm.s2 = qs.aq(ActId::PostPool1).scale();
    qm.s3 = qs.aq(ActId::PostSepDepth).scale();
    qm.s4r = qs.aq(ActId::PostRelu2).scale();
    qm.s4 = qs.aq(ActId::PostPool2).scale();

    // conv1 + bn1
    const BnFold f1 = fold_bn(m.bn1, c.bn_eps);
    {
        const Quantizer& q = qs.wq(WeightId::Temporal);
        std::vector<float> signs;
        for (float g : f1.gain) signs.push_back(g < 0 ? -1.0f : 1.0f);
        qm.w1 = quantize_weights(m.w_temporal, q, signs);
        qm.rq1.relu = false;
        for (int f = 0; f < c.temporal_filters; ++f) {
            const double sw = q.scale(f) * std::abs(f1.gain[f]);
            std::int32_t mult;
            int shift;
            derive_multiplier(static_cast<double>(qm.s_in) * sw / qm.s1, mult, shift);
            qm.rq1.multiplier.push_back(mult);
            qm.rq1.shift.push_back(shift);
            qm.rq1.bias.push_back(std::llround(f1.bias[f] / qm.s1 * std::exp2(static_cast<double>(shift))));
        }
    }

    // conv2 + bn2 (+relu)
    const BnFold f2 = fold_bn(m.bn2, c.bn_eps);
    {
        const Quantizer& q = qs.wq(WeightId::Spatial);
        std::vector<float> signs;
        for (float g : f2.gain) signs.push_back(g < 0 ? -1.0f : 1.0f);
        qm.w2 = quantize_weights(m.w_spatial, q, signs);
        qm.rq2.relu = true;
        for (int mm = 0; mm < c.spatial_maps(); ++mm) {
            const double sw = q.scale(mm) * std::abs(f2.gain[mm]);
            std::int32_t mult;
            int shift;
            derive_multiplier(static_cast<double>(qm.s1) * sw / qm.s2r, mult, shift);
            qm.rq2.multiplier.push_back(mult);
            qm.rq2.shift.push_back(shift);
            qm.rq2.bias.push_back(std::llround(f2.bias[mm] / qm.s2r * std::exp2(static_cast<double>(shift))));
        }
    }

    // pool1
    {
        std::int32_t mult;
        int shift;
        derive_multiplier(static_cast<double>(qm.s2r) / (c.pool1 * static_cast<double>(qm.s2)), mult, shift);
        qm.rq_pool1.multiplier = {mult};
        qm.rq_pool1.shift = {shift};
    }

    // conv3 (no norm)
    {
        const Quantizer& q = qs.wq(WeightId::SepDepth);
        qm.w3 = quantize_weights(m.w_sep_depth, q, {});
        qm.rq3.relu = false;
        for (int mm = 0; mm < c.spatial_maps(); ++mm) {
            std::int32_t mult;
            int shift;
            derive_multiplier(static_cast<double>(qm.s2) * q.scale(mm) / qm.s3, mult, shift);
            qm.rq3.multiplier.push_back(mult);
            qm.rq3.shift.push_back(shift);
        }
    }

    // conv4 + bn3 (+relu)
    const BnFold f3 = fold_bn(m.bn3, c.bn_eps);
    {
        const Quantizer& q = qs.wq(WeightId::SepPoint);
        std::vector<float> signs;
        for (float g : f3.gain) signs.push_back(g < 0 ? -1.0f : 1.0f);
        qm.w4 = quantize_weights(m.w_sep_point, q, signs);
        qm.rq4.relu = true;
        for (int mm = 0; mm < c.spatial_maps(); ++mm) {
            const double sw = q.scale(mm) * std::abs(f3.gain[mm]);
            std::int32_t mult;
            int shift;
            derive_multiplier(static_cast<double>(qm.s3) * sw / qm.s4r, mult, shift);
            qm.rq4.multiplier.push_back(mult);
            qm.rq4.shift.push_back(shift);
            qm.rq4.bias.push_back(std::llround(f3.bias[mm] / qm.s4r * std::exp2(static_cast<double>(shift))));
        }
    }

    // pool2
    {
        std::int32_t mult;
        int shift;
        derive_multiplier(static_cast<double>(qm.s4r) / (c.pool2 * static_cast<double>(qm.s4)), mult, shift);
        qm.rq_pool2.multiplier = {mult};
        qm.rq_pool2.shift = {shift};
    }

    // head
    qm.bd = m.b_dense;
    if (qm.int8_head) {
        const Quantizer& q = qs.wq(WeightId::Dense);
        qm.wd = quantize_weights(m.w_dense, q, {});
        for (int cc = 0; cc < c.n_classes; ++cc) qm.sd.push_back(q.scale(cc));
    } else {
        qm.wd_f32 = m.w_dense;
    }

    // calibration probe: activations wildly outside the learned grids indicate
    // a model that was never quantization-trained
    if (!calibration.empty()) {
        QatState& mqs = const_cast<QatState&>(qs);
        FakeQuantContext ctx(mqs, m, true);
        nn::ForwardCache cache;
        for (std::size_t i = 0; i < std::min<std::size_t>(calibration.size(), 8); ++i) {
            nn::Batch b;
            b.trials = {calibration[i]};
            b.labels = {calibration[i]->label};
            nn::forward(m, b, false, cache, nullptr, &ctx);
            for (float v : cache.logits)
                if (!std::isfinite(v)) throw ConfigError("calibration forward produced non-finite logits");
        }
    }
    return qm;
}

// ---------------------------------------------------------------
// Integer inference
// ---------------------------------------------------------------

Int8Forward int8_forward(const QuantizedModel& qm, const TrialTensor& t) {
    const auto& c = qm.cfg;
    const int C = c.n_channels, T = c.n_samples, F1 = c.temporal_filters, D = c.spatial_depth_multiplier;
    const int M = c.spatial_maps(), K1 = c.temporal_kernel, K2 = c.separable_kernel;
    const int T1 = c.pooled1(), T2 = c.pooled2(), F = c.feature_len();
    if (t.n_channels != C || t.n_samples != T) throw ShapeError("trial shape does not match the model");

    // input quantization (the only float step before the head)
    std::vector<std::int8_t> x(static_cast<std::size_t>(C) * T);
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = static_cast<std::int8_t>(std::clamp(std::rintf(t.samples[i] / qm.s_in), -128.0f, 127.0f));

    // conv1 + bn1 -> y1 on the s1 grid
    const int pl1 = (K1 - 1) / 2;
    std::vector<std::int8_t> y1(static_cast<std::size_t>(F1) * C * T);
    for (int f = 0; f < F1; ++f)
        for (int ch = 0; ch < C; ++ch) {
            const std::int8_t* xin = &x[static_cast<std::size_t>(ch) * T];
            std::int8_t* out = &y1[(static_cast<std::size_t>(f) * C + ch) * T];
            for (int ti = 0; ti < T; ++ti) {
                std::int32_t acc = 0;
                const int k0 = std::max(0, pl1 - ti);
                const int k1 = std::min(K1, T + pl1 - ti);
                for (int k = k0; k < k1; ++k) acc += static_cast<std::int32_t>(qm.w1[f * K1 + k]) * xin[ti + k - pl1];
                out[ti] = requant_one(acc, qm.rq1.bias[f], qm.rq1.multiplier[f], qm.rq1.shift[f], false);
            }
        }

    // conv2 + bn2 + relu -> s2r
    std::vector<std::int8_t> r2(static_cast<std::size_t>(M) * T);
    for (int mm = 0; mm < M; ++mm) {
        const int f = mm / D;
        for (int ti = 0; ti < T; ++ti) {
            std::int32_t acc = 0;
            for (int ch = 0; ch < C; ++ch)
                acc += static_cast<std::int32_t>(qm.w2[mm * C + ch]) * y1[(static_cast<std::size_t>(f) * C + ch) * T + ti];
            r2[static_cast<std::size_t>(mm) * T + ti] =
                requant_one(acc, qm.rq2.bias[mm], qm.rq2.multiplier[mm], qm.rq2.shift[mm], true);
        }
    }

    // pool1 -> s2
    std::vector<std::int8_t> p1(static_cast<std::size_t>(M) * T1);
    for (int mm = 0; mm < M; ++mm)
        for (int u = 0; u < T1; ++u) {
            std::int32_t acc = 0;
            for (int j = 0; j < c.pool1; ++j) acc += r2[static_cast<std::size_t>(mm) * T + u * c.pool1 + j];
            p1[static_cast<std::size_t>(mm) * T1 + u] =
                requant_one(acc, 0, qm.rq_pool1.multiplier[0], qm.rq_pool1.shift[0], false);
        }

    // conv3 -> s3
    const int pl2 = (K2 - 1) / 2;
    std::vector<std::int8_t> a3(static_cast<std::size_t>(M) * T1);
    for (int mm = 0; mm < M; ++mm)
        for (int u = 0; u < T1; ++u) {
            std::int32_t acc = 0;
            const int k0 = std::max(0, pl2 - u);
            const int k1 = std::min(K2, T1 + pl2 - u);
            for (int k = k0; k < k1; ++k)
                acc += static_cast<std::int32_t>(qm.w3[mm * K2 + k]) * p1[static_cast<std::size_t>(mm) * T1 + u + k - pl2];
            a3[static_cast<std::size_t>(mm) * T1 + u] =
                requant_one(acc, 0, qm.rq3.multiplier[mm], qm.rq3.shift[mm], false);
        }

    // conv4 + bn3 + relu -> s4r
    std::vector<std::int8_t> r3(static_cast<std::size_t>(M) * T1);
    for (int mm = 0; mm < M; ++mm)
        for (int u = 0; u < T1; ++u) {
            std::int32_t acc = 0;
            for (int j = 0; j < M; ++j)
                acc += static_cast<std::int32_t>(qm.w4[mm * M + j]) * a3[static_cast<std::size_t>(j) * T1 + u];
            r3[static_cast<std::size_t>(mm) * T1 + u] =
                requant_one(acc, qm.rq4.bias[mm], qm.rq4.multiplier[mm], qm.rq4.shift[mm], true);
        }

    // pool2 -> s4 features
    Int8Forward out;
    out.features.resize(static_cast<std::size_t>(M) * T2);
    for (int mm = 0; mm < M; ++mm)
        for (int u = 0; u < T2; ++u) {
            std::int32_t acc = 0;
            for (int j = 0; j < c.pool2; ++j) acc += r3[static_cast<std::size_t>(mm) * T1 + u * c.pool2 + j];
            out.features[static_cast<std::size_t>(mm) * T2 + u] =
                requant_one(acc, 0, qm.rq_pool2.multiplier[0], qm.rq_pool2.shift[0], false);
        }

    out.features_f32.resize(F);
    for (int i = 0; i < F; ++i) out.features_f32[i] = out.features[i] * qm.s4;

    // head
    out.logits.resize(c.n_classes);
    if (qm.int8_head) {
        for (int cc = 0; cc < c.n_classes; ++cc) {
            std::int64_t acc = 0;
            const std::int8_t* wrow = &qm.wd[static_cast<std::size_t>(cc) * F];
            for (int i = 0; i < F; ++i) acc += static_cast<std::int32_t>(wrow[i]) * out.features[i];
            out.logits[cc] = static_cast<float>(acc) * (qm.s4 * qm.sd[cc]) + qm.bd[cc];
        }
    } else {
        for (int cc = 0; cc < c.n_classes; ++cc) {
            double acc = qm.bd[cc];
            const float* wrow = &qm.wd_f32[static_cast<std::size_t>(cc) * F];
            for (int i = 0; i < F; ++i) acc += static_cast<double>(wrow[i]) * out.features_f32[i];
            out.logits[cc] = static_cast<float>(acc);
        }
    }
    return out;
}

nn::EvalResult int8_evaluate(const QuantizedModel& qm, const nn::TrialList& data) {
    if (data.empty()) throw DataError("empty evaluation set");
    const int nc = qm.cfg.n_classes;
    nn::EvalResult res;
    res.confusion.n_classes = nc;
    res.confusion.counts.assign(static_cast<std::size_t>(nc) * nc, 0);
    for (const TrialTensor* t : data) {
        Int8Forward f = int8_forward(qm, *t);
        int arg = 0;
        for (int cc = 1; cc < nc; ++cc)
            if (f.logits[cc] > f.logits[arg]) arg = cc;
        res.predictions.push_back(arg);
        res.confusion.at(t->label, arg) += 1;
    }
    res.accuracy_pct = res.confusion.accuracy_pct();
    return res;
}

// ---------------------------------------------------------------
// Blob IO
// ---------------------------------------------------------------

std::size_t QuantizedModel::backbone_blob_bytes() const {
    std::size_t bytes = w1.size() + w2.size() + w3.size() + w4.size();
    for (const RequantParams* rq : {&rq1, &rq2, &rq_pool1, &rq3, &rq4, &rq_pool2})
        bytes += 4 * (rq->multiplier.size() + rq->shift.size()) + 8 * rq->bias.size();
    bytes += 4 * 7;  // activation scales
    return bytes;
}

namespace {

void write_requant(std::ostream& os, const RequantParams& rq) {
    io::write_i32_array(os, rq.multiplier);
    std::vector<std::int32_t> shifts(rq.shift.begin(), rq.shift.end());
    io::write_i32_array(os, shifts);
    io::write_u64(os, rq.bias.size());
    for (std::int64_t b : rq.bias) io::write_u64(os, static_cast<std::uint64_t>(b));
    io::write_u32(os, rq.relu ? 1 : 0);
}

RequantParams read_requant(std::istream& is) {
    RequantParams rq;
    rq.multiplier = io::read_i32_array(is);
    for (std::int32_t s : io::read_i32_array(is)) rq.shift.push_back(s);
    const std::uint64_t n = io::read_u64(is);
    for (std::uint64_t i = 0; i < n; ++i) rq.bias.push_back(static_cast<std::int64_t>(io::read_u64(is)));
    rq.relu = io::read_u32(is) != 0;
    return rq;
}

}  // namespace

void save_quantized(const QuantizedModel& qm, const std::string& path) {
    auto os = io::open_out(path);
    save_quantized(qm, os);
    if (!os) throw LoadError("failed writing quantized model: " + path);
}

void save_quantized(const QuantizedModel& qm, std::ostream& os) {
    io::write_u32(os, kQuantMagic);
    io::write_u32(os, kQuantVersion);
    const auto& c = qm.cfg;
    for (int v : {c.n_channels, c.n_samples, c.n_classes, c.temporal_filters, c.temporal_kernel,
                  c.spatial_depth_multiplier, c.separable_kernel, c.pool1, c.pool2})
        io::write_i32(os, v);
    io::write_f32(os, c.dropout_rate);
    io::write_f32(os, c.bn_momentum);
    io::write_f32(os, c.bn_eps);
    io::write_u32(os, qm.int8_head ? 1 : 0);
    for (float s : {qm.s_in, qm.s1, qm.s2r, qm.s2, qm.s3, qm.s4r, qm.s4}) io::write_f32(os, s);
    io::write_i8_array(os, qm.w1);
    write_requant(os, qm.rq1);
    io::write_i8_array(os, qm.w2);
    write_requant(os, qm.rq2);
    write_requant(os, qm.rq_pool1);
    io::write_i8_array(os, qm.w3);
    write_requant(os, qm.rq3);
    io::write_i8_array(os, qm.w4);
    write_requant(os, qm.rq4);
    write_requant(os, qm.rq_pool2);
    io::write_i8_array(os, qm.wd);
    io::write_f32_array(os, qm.sd);
    io::write_f32_array(os, qm.wd_f32);
    io::write_f32_array(os, qm.bd);
}

QuantizedModel load_quantized(const std::string& path) {
    auto is = io::open_in(path);
    if (io::read_u32(is) != kQuantMagic) throw LoadError("not a quantized model blob: " + path);
    if (io::read_u32(is) != kQuantVersion) throw LoadError("unsupported blob version: " + path);
    QuantizedModel qm;
    auto& c = qm.cfg;
    c.n_channels = io::read_i32(is);
    c.n_samples = io::read_i32(is);
    c.n_classes = io::read_i32(is);
    c.temporal_filters = io::read_i32(is);
    c.temporal_kernel = io::read_i32(is);
    c.spatial_depth_multiplier = io::read_i32(is);
    c.separable_kernel = io::read_i32(is);
    c.pool1 = io::read_i32(is);
    c.pool2 = io::read_i32(is);
    c.dropout_rate = io::read_f32(is);
    c.bn_momentum = io::read_f32(is);
    c.bn_eps = io::read_f32(is);
    c.validate();
    qm.int8_head = io::read_u32(is) != 0;
    qm.s_in = io::read_f32(is);
    qm.s1 = io::read_f32(is);
    qm.s2r = io::read_f32(is);
    qm.s2 = io::read_f32(is);
    qm.s3 = io::read_f32(is);
    qm.s4r = io::read_f32(is);
    qm.s4 = io::read_f32(is);
    qm.w1 = io::read_i8_array(is);
    qm.rq1 = read_requant(is);
    qm.w2 = io::read_i8_array(is);
    qm.rq2 = read_requant(is);
    qm.rq_pool1 = read_requant(is);
    qm.w3 = io::read_i8_array(is);
    qm.rq3 = read_requant(is);
    qm.w4 = io::read_i8_array(is);
    qm.rq4 = read_requant(is);
    qm.rq_pool2 = read_requant(is);
    qm.wd = io::read_i8_array(is);
    qm.sd = io::read_f32_array(is);
    qm.wd_f32 = io::read_f32_array(is);
    qm.bd = io::read_f32_array(is);
    return qm;
}

}  // namespace bmi::quant
