#include "bmi/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <future>
#include <numeric>

#include "bmi/io_util.hpp"

namespace bmi::nn {

namespace {

constexpr std::uint32_t kModelMagic = 0x4D494D42;  // "BMIM"
constexpr std::uint32_t kModelVersion = 1;

inline std::size_t idx3(int a, int b, int c, int nb, int nc) {
    return (static_cast<std::size_t>(a) * nb + b) * nc + c;
}

// y[t0..t1) += w * x[t0+off .. t1+off)
inline void saxpy_shifted(float w, const float* x, float* y, int t0, int t1, int off) {
    const float* xs = x + off;
    for (int t = t0; t < t1; ++t) y[t] += w * xs[t];
}

inline double dot_shifted(const float* a, const float* x, int t0, int t1, int off) {
    // four independent accumulators so the reduction vectorizes
    const float* xs = x + off;
    float a0 = 0.0f, a1 = 0.0f, a2 = 0.0f, a3 = 0.0f;
    int t = t0;
    for (; t + 4 <= t1; t += 4) {
        a0 += a[t] * xs[t];
        a1 += a[t + 1] * xs[t + 1];
        a2 += a[t + 2] * xs[t + 2];
        a3 += a[t + 3] * xs[t + 3];
    }
    for (; t < t1; ++t) a0 += a[t] * xs[t];
    return (a0 + a1) + (a2 + a3);
}

void glorot_fill(std::vector<float>& w, int fan_in, int fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : w) v = static_cast<float>(rng.uniform(-limit, limit));
}

}  // namespace

// ---------------------------------------------------------------
// Config / model setup
// ---------------------------------------------------------------

std::size_t ModelConfig::param_count() const {
    const std::size_t f1 = temporal_filters, k1 = temporal_kernel, m = spatial_maps();
    return f1 * k1 + 2 * f1 + m * n_channels + 2 * m + m * separable_kernel + m * m + 2 * m +
           static_cast<std::size_t>(n_classes) * feature_len() + n_classes;
}

void ModelConfig::validate() const {
    if (n_channels < 1 || n_samples < 1 || n_classes < 2) throw ConfigError("bad input/class dimensions");
    if (temporal_filters < 1 || spatial_depth_multiplier < 1) throw ConfigError("bad filter counts");
    if (temporal_kernel < 1 || temporal_kernel > n_samples) throw ConfigError("temporal kernel out of range");
    if (separable_kernel < 1 || pool1 < 1 || pool2 < 1) throw ConfigError("bad kernel/pool sizes");
    if (pooled1() < 1 || pooled2() < 1) throw ConfigError("pooling collapses the time axis");
    if (separable_kernel > pooled1()) throw ConfigError("separable kernel longer than pooled signal");
    if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) throw ConfigError("dropout must be in [0,1)");
}

static BatchNormParams make_bn(int n) {
    BatchNormParams bn;
    bn.gamma.assign(n, 1.0f);
    bn.beta.assign(n, 0.0f);
    bn.running_mean.assign(n, 0.0f);
    bn.running_var.assign(n, 1.0f);
    return bn;
}

Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng = Rng(seed).split("model_init");

    const int f1 = cfg.temporal_filters, k1 = cfg.temporal_kernel, mm = cfg.spatial_maps();
    m.w_temporal.resize(static_cast<std::size_t>(f1) * k1);
    glorot_fill(m.w_temporal, k1, f1 * k1, rng);
    m.bn1 = make_bn(f1);
    m.w_spatial.resize(static_cast<std::size_t>(mm) * cfg.n_channels);
    glorot_fill(m.w_spatial, cfg.n_channels, cfg.n_channels * cfg.spatial_depth_multiplier, rng);
    m.bn2 = make_bn(mm);
    m.w_sep_depth.resize(static_cast<std::size_t>(mm) * cfg.separable_kernel);
    glorot_fill(m.w_sep_depth, cfg.separable_kernel, cfg.separable_kernel, rng);
    m.w_sep_point.resize(static_cast<std::size_t>(mm) * mm);
    glorot_fill(m.w_sep_point, mm, mm, rng);
    m.bn3 = make_bn(mm);
    m.w_dense.resize(static_cast<std::size_t>(cfg.n_classes) * cfg.feature_len());
    glorot_fill(m.w_dense, cfg.feature_len(), cfg.n_classes, rng);
    m.b_dense.assign(cfg.n_classes, 0.0f);
    return m;
}

void ModelGrads::resize_like(const Model& m) {
    w_temporal.assign(m.w_temporal.size(), 0.0f);
    bn1_gamma.assign(m.bn1.gamma.size(), 0.0f);
    bn1_beta.assign(m.bn1.beta.size(), 0.0f);
    w_spatial.assign(m.w_spatial.size(), 0.0f);
    bn2_gamma.assign(m.bn2.gamma.size(), 0.0f);
    bn2_beta.assign(m.bn2.beta.size(), 0.0f);
    w_sep_depth.assign(m.w_sep_depth.size(), 0.0f);
    w_sep_point.assign(m.w_sep_point.size(), 0.0f);
    bn3_gamma.assign(m.bn3.gamma.size(), 0.0f);
    bn3_beta.assign(m.bn3.beta.size(), 0.0f);
    w_dense.assign(m.w_dense.size(), 0.0f);
    b_dense.assign(m.b_dense.size(), 0.0f);
}

void ModelGrads::zero() {
    auto z = [](std::vector<float>& v) { std::fill(v.begin(), v.end(), 0.0f); };
    z(w_temporal); z(bn1_gamma); z(bn1_beta);
    z(w_spatial); z(bn2_gamma); z(bn2_beta);
    z(w_sep_depth); z(w_sep_point); z(bn3_gamma); z(bn3_beta);
    z(w_dense); z(b_dense);
}

std::vector<ParamRef> param_refs(Model& m) {
    return {
        {m.w_temporal.data(), m.w_temporal.size(), ParamGroup::TemporalConv, "w_temporal"},
        {m.bn1.gamma.data(), m.bn1.gamma.size(), ParamGroup::BatchNorms, "bn1.gamma"},
        {m.bn1.beta.data(), m.bn1.beta.size(), ParamGroup::BatchNorms, "bn1.beta"},
        {m.w_spatial.data(), m.w_spatial.size(), ParamGroup::SpatialConv, "w_spatial"},
        {m.bn2.gamma.data(), m.bn2.gamma.size(), ParamGroup::BatchNorms, "bn2.gamma"},
        {m.bn2.beta.data(), m.bn2.beta.size(), ParamGroup::BatchNorms, "bn2.beta"},
        {m.w_sep_depth.data(), m.w_sep_depth.size(), ParamGroup::SepDepthwise, "w_sep_depth"},
        {m.w_sep_point.data(), m.w_sep_point.size(), ParamGroup::SepPointwise, "w_sep_point"},
        {m.bn3.gamma.data(), m.bn3.gamma.size(), ParamGroup::BatchNorms, "bn3.gamma"},
        {m.bn3.beta.data(), m.bn3.beta.size(), ParamGroup::BatchNorms, "bn3.beta"},
        {m.w_dense.data(), m.w_dense.size(), ParamGroup::DenseHead, "w_dense"},
        {m.b_dense.data(), m.b_dense.size(), ParamGroup::DenseHead, "b_dense"},
    };
}

std::vector<ParamRef> grad_refs(ModelGrads& g, const Model&) {
    return {
        {g.w_temporal.data(), g.w_temporal.size(), ParamGroup::TemporalConv, "w_temporal"},
        {g.bn1_gamma.data(), g.bn1_gamma.size(), ParamGroup::BatchNorms, "bn1.gamma"},
        {g.bn1_beta.data(), g.bn1_beta.size(), ParamGroup::BatchNorms, "bn1.beta"},
        {g.w_spatial.data(), g.w_spatial.size(), ParamGroup::SpatialConv, "w_spatial"},
        {g.bn2_gamma.data(), g.bn2_gamma.size(), ParamGroup::BatchNorms, "bn2.gamma"},
        {g.bn2_beta.data(), g.bn2_beta.size(), ParamGroup::BatchNorms, "bn2.beta"},
        {g.w_sep_depth.data(), g.w_sep_depth.size(), ParamGroup::SepDepthwise, "w_sep_depth"},
        {g.w_sep_point.data(), g.w_sep_point.size(), ParamGroup::SepPointwise, "w_sep_point"},
        {g.bn3_gamma.data(), g.bn3_gamma.size(), ParamGroup::BatchNorms, "bn3.gamma"},
        {g.bn3_beta.data(), g.bn3_beta.size(), ParamGroup::BatchNorms, "bn3.beta"},
        {g.w_dense.data(), g.w_dense.size(), ParamGroup::DenseHead, "w_dense"},
        {g.b_dense.data(), g.b_dense.size(), ParamGroup::DenseHead, "b_dense"},
    };
}

bool group_trainable(ParamGroup g, int depth) {
    return static_cast<int>(g) <= depth;
}

// ---------------------------------------------------------------
// Layer kernels
// ---------------------------------------------------------------

namespace {

// temporal conv, same padding: y[b,f,c,:] = w[f,:] (*) x[b,c,:]
void conv_temporal_fwd(const float* x, const float* w, float* y, int B, int C, int T, int F1, int K) {
    const int pl = (K - 1) / 2;
    for (int b = 0; b < B; ++b)
        for (int f = 0; f < F1; ++f)
            for (int c = 0; c < C; ++c) {
                float* out = y + idx3(b * F1 + f, c, 0, C, T) - static_cast<std::size_t>(0);
                const float* in = x + idx3(b, c, 0, C, T);
                std::fill(out, out + T, 0.0f);
                for (int k = 0; k < K; ++k) {
                    const int off = k - pl;
                    const int t0 = off < 0 ? -off : 0;
                    const int t1 = off > 0 ? T - off : T;
                    saxpy_shifted(w[f * K + k], in, out, t0, t1, off);
                }
            }
}

void conv_temporal_bwd_w(const float* x, const float* dy, float* dw, int B, int C, int T, int F1, int K) {
    // per-t rank-1 updates keep the k loop contiguous, which vectorizes far
    // better than 2048 separate strided reductions
    const int pl = (K - 1) / 2;
    for (int b = 0; b < B; ++b)
        for (int f = 0; f < F1; ++f) {
            float* dwrow = dw + static_cast<std::size_t>(f) * K;
            for (int c = 0; c < C; ++c) {
                const float* dyp = dy + idx3(b * F1 + f, c, 0, C, T);
                const float* xp = x + idx3(b, c, 0, C, T);
                for (int t = 0; t < T; ++t) {
                    const float g = dyp[t];
                    const int k0 = std::max(0, pl - t);
                    const int k1 = std::min(K, T + pl - t);
                    const float* xs = xp + t - pl;
                    for (int k = k0; k < k1; ++k) dwrow[k] += g * xs[k];
                }
            }
        }
}

// gradient w.r.t. the conv input (needed only when the input quantizer learns)
void conv_temporal_bwd_x(const float* w, const float* dy, float* dx, int B, int C, int T, int F1, int K) {
    const int pl = (K - 1) / 2;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            float* out = dx + idx3(b, c, 0, C, T);
            std::fill(out, out + T, 0.0f);
            for (int f = 0; f < F1; ++f) {
                const float* dyp = dy + idx3(b * F1 + f, c, 0, C, T);
                for (int k = 0; k < K; ++k) {
                    const int off = pl - k;  // dx[t] += w[k] * dy[t + pl - k]
                    const int t0 = off < 0 ? -off : 0;
                    const int t1 = off > 0 ? T - off : T;
                    saxpy_shifted(w[f * K + k], dyp, out, t0, t1, off);
                }
            }
        }
}

// depthwise spatial conv across channels: y[b,m,:] = sum_c w[m,c] * in[b,f(m),c,:]
void conv_spatial_fwd(const float* in, const float* w, float* y, int B, int F1, int C, int T, int D) {
    const int M = F1 * D;
    for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m) {
            const int f = m / D;
            float* out = y + idx3(b, m, 0, M, T);
            std::fill(out, out + T, 0.0f);
            for (int c = 0; c < C; ++c)
                saxpy_shifted(w[m * C + c], in + idx3(b * F1 + f, c, 0, C, T), out, 0, T, 0);
        }
}

void conv_spatial_bwd(const float* in, const float* w, const float* dy, float* dw, float* din, int B, int F1,
                      int C, int T, int D) {
    const int M = F1 * D;
    const std::size_t in_sz = static_cast<std::size_t>(B) * F1 * C * T;
    std::fill(din, din + in_sz, 0.0f);
    for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m) {
            const int f = m / D;
            const float* dyp = dy + idx3(b, m, 0, M, T);
            for (int c = 0; c < C; ++c) {
                dw[m * C + c] += static_cast<float>(dot_shifted(dyp, in + idx3(b * F1 + f, c, 0, C, T), 0, T, 0));
                saxpy_shifted(w[m * C + c], dyp, const_cast<float*>(din) + idx3(b * F1 + f, c, 0, C, T), 0, T, 0);
            }
        }
}

// depthwise temporal conv (separable stage 1), same padding
void conv_sep_depth_fwd(const float* in, const float* w, float* y, int B, int M, int T, int K) {
    const int pl = (K - 1) / 2;
    for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m) {
            float* out = y + idx3(b, m, 0, M, T);
            const float* xp = in + idx3(b, m, 0, M, T);
            std::fill(out, out + T, 0.0f);
            for (int k = 0; k < K; ++k) {
                const int off = k - pl;
                const int t0 = off < 0 ? -off : 0;
                const int t1 = off > 0 ? T - off : T;
                saxpy_shifted(w[m * K + k], xp, out, t0, t1, off);
            }
        }
}

void conv_sep_depth_bwd(const float* in, const float* w, const float* dy, float* dw, float* din, int B, int M,
                        int T, int K) {
    const int pl = (K - 1) / 2;
    const std::size_t sz = static_cast<std::size_t>(B) * M * T;
    std::fill(din, din + sz, 0.0f);
    for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m) {
            const float* dyp = dy + idx3(b, m, 0, M, T);
            const float* xp = in + idx3(b, m, 0, M, T);
            float* dxp = din + idx3(b, m, 0, M, T);
            for (int k = 0; k < K; ++k) {
                int off = k - pl;
                int t0 = off < 0 ? -off : 0;
                int t1 = off > 0 ? T - off : T;
                dw[m * K + k] += static_cast<float>(dot_shifted(dyp, xp, t0, t1, off));
                off = pl - k;
                t0 = off < 0 ? -off : 0;
                t1 = off > 0 ? T - off : T;
                saxpy_shifted(w[m * K + k], dyp, dxp, t0, t1, off);
            }
        }
}

// pointwise 1x1 conv mixing maps: y[b,m,:] = sum_j w[m,j] * in[b,j,:]
void conv_point_fwd(const float* in, const float* w, float* y, int B, int M, int T) {
    for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m) {
            float* out = y + idx3(b, m, 0, M, T);
            std::fill(out, out + T, 0.0f);
            for (int j = 0; j < M; ++j) saxpy_shifted(w[m * M + j], in + idx3(b, j, 0, M, T), out, 0, T, 0);
        }
}

void conv_point_bwd(const float* in, const float* w, const float* dy, float* dw, float* din, int B, int M, int T) {
    const std::size_t sz = static_cast<std::size_t>(B) * M * T;
    std::fill(din, din + sz, 0.0f);
    for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m) {
            const float* dyp = dy + idx3(b, m, 0, M, T);
            for (int j = 0; j < M; ++j) {
                dw[m * M + j] += static_cast<float>(dot_shifted(dyp, in + idx3(b, j, 0, M, T), 0, T, 0));
                saxpy_shifted(w[m * M + j], dyp, din + idx3(b, j, 0, M, T), 0, T, 0);
            }
        }
}

// Batch norm over the feature-map axis; two concrete layouts are used:
// [B][F][C][T] (per temporal filter, plane = C*T) and [B][M][T] (plane = T).

// train mode normalizes with batch statistics (written to mu/var), eval mode
// with the stored running statistics.
void bn_fwd_filters(const float* x, const BatchNormParams& bn, bool train, float eps, float* xhat, float* y,
                    float* mu_out, float* var_out, int B, int F, int C, int T) {
    const std::size_t plane = static_cast<std::size_t>(C) * T;
    const std::size_t n = static_cast<std::size_t>(B) * plane;
    for (int f = 0; f < F; ++f) {
        float mu, var;
        if (train) {
            double s = 0.0, s2 = 0.0;
            for (int b = 0; b < B; ++b) {
                const float* p = x + (static_cast<std::size_t>(b) * F + f) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    s += p[i];
                    s2 += static_cast<double>(p[i]) * p[i];
                }
            }
            mu = static_cast<float>(s / n);
            var = static_cast<float>(std::max(0.0, s2 / n - (s / n) * (s / n)));
            mu_out[f] = mu;
            var_out[f] = var;
        } else {
            mu = bn.running_mean[f];
            var = bn.running_var[f];
        }
        const float inv = 1.0f / std::sqrt(var + eps);
        const float g = bn.gamma[f], be = bn.beta[f];
        for (int b = 0; b < B; ++b) {
            const float* p = x + (static_cast<std::size_t>(b) * F + f) * plane;
            float* xh = xhat + (static_cast<std::size_t>(b) * F + f) * plane;
            float* yo = y + (static_cast<std::size_t>(b) * F + f) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const float h = (p[i] - mu) * inv;
                xh[i] = h;
                yo[i] = g * h + be;
            }
        }
    }
}

// batch_stats: true differentiates through the batch statistics (train mode);
// false treats mean/var as constants (eval mode, running statistics).
void bn_bwd_filters(const float* xhat, const float* dy, const BatchNormParams& bn, const float* var,
                    bool batch_stats, float eps, float* dgamma, float* dbeta, float* dx, int B, int F, int C,
                    int T) {
    const std::size_t plane = static_cast<std::size_t>(C) * T;
    const double n = static_cast<double>(B) * plane;
    for (int f = 0; f < F; ++f) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < B; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * F + f) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += dy[base + i];
                sum_dy_xhat += static_cast<double>(dy[base + i]) * xhat[base + i];
            }
        }
        dgamma[f] += static_cast<float>(sum_dy_xhat);
        dbeta[f] += static_cast<float>(sum_dy);
        const float inv = 1.0f / std::sqrt(var[f] + eps);
        const float g = bn.gamma[f];
        const float mean_dy = batch_stats ? static_cast<float>(sum_dy / n) : 0.0f;
        const float mean_dy_xhat = batch_stats ? static_cast<float>(sum_dy_xhat / n) : 0.0f;
        for (int b = 0; b < B; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * F + f) * plane;
            for (std::size_t i = 0; i < plane; ++i)
                dx[base + i] = g * inv * (dy[base + i] - mean_dy - xhat[base + i] * mean_dy_xhat);
        }
    }
}

void avgpool_fwd(const float* x, float* y, int B, int M, int T, int P) {
    const int To = T / P;
    const float inv = 1.0f / P;
    for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m) {
            const float* in = x + idx3(b, m, 0, M, T);
            float* out = y + idx3(b, m, 0, M, To);
            for (int u = 0; u < To; ++u) {
                float s = 0.0f;
                for (int j = 0; j < P; ++j) s += in[u * P + j];
                out[u] = s * inv;
            }
        }
}

void avgpool_bwd(const float* dy, float* dx, int B, int M, int T, int P) {
    const int To = T / P;
    const float inv = 1.0f / P;
    const std::size_t sz = static_cast<std::size_t>(B) * M * T;
    std::fill(dx, dx + sz, 0.0f);
    for (int b = 0; b < B; ++b)
        for (int m = 0; m < M; ++m) {
            const float* g = dy + idx3(b, m, 0, M, To);
            float* out = dx + idx3(b, m, 0, M, T);
            for (int u = 0; u < To; ++u)
                for (int j = 0; j < P; ++j) out[u * P + j] = g[u] * inv;
        }
}

}  // namespace

// ---------------------------------------------------------------
// Forward
// ---------------------------------------------------------------

ForwardResult forward(const Model& m, const Batch& b, bool train_mode, ForwardCache& cache, Rng* rng,
                      QatContext* qat) {
    const ModelConfig& cfg = m.cfg;
    const int B = b.size();
    if (B == 0) throw DataError("empty batch");
    if (train_mode && rng == nullptr) throw ParameterError("train-mode forward needs an rng for dropout");
    const int C = cfg.n_channels, T = cfg.n_samples, F1 = cfg.temporal_filters;
    const int M = cfg.spatial_maps(), T1 = cfg.pooled1(), T2 = cfg.pooled2(), F = cfg.feature_len();
    const int nc = cfg.n_classes;

    for (const TrialTensor* t : b.trials) {
        if (t->n_channels != C || t->n_samples != T) throw ShapeError("trial shape does not match the model");
    }

    auto sz = [](int a, int bb, int c) { return static_cast<std::size_t>(a) * bb * c; };
    cache.batch = B;
    cache.train_mode = train_mode;
    cache.x.resize(sz(B, C, T));
    cache.xhat1.resize(sz(B, F1 * C, T));
    cache.y1.resize(sz(B, F1 * C, T));
    cache.xhat2.resize(sz(B, M, T));
    cache.y2.resize(sz(B, M, T));
    cache.r2.resize(sz(B, M, T));
    cache.p1.resize(sz(B, M, T1));
    cache.drop1.resize(sz(B, M, T1));
    cache.d1.resize(sz(B, M, T1));
    cache.a3.resize(sz(B, M, T1));
    cache.xhat3.resize(sz(B, M, T1));
    cache.y3.resize(sz(B, M, T1));
    cache.r3.resize(sz(B, M, T1));
    cache.p2.resize(sz(B, M, T2));
    cache.drop2.resize(sz(B, M, T2));
    cache.feat.resize(sz(B, F, 1));
    cache.logits.resize(static_cast<std::size_t>(B) * nc);
    cache.mu1.resize(F1);
    cache.var1.resize(F1);
    cache.mu2.resize(M);
    cache.var2.resize(M);
    cache.mu3.resize(M);
    cache.var3.resize(M);

    // gather inputs
    for (int i = 0; i < B; ++i)
        std::memcpy(&cache.x[sz(i, C, T)], b.trials[i]->samples.data(), sizeof(float) * C * T);
    const bool q = qat && qat->enabled();
    if (q) qat->fq_activation(ActId::Input, cache.x);

    // conv1 + bn1
    const std::vector<float>& w1 = q ? qat->fq_weights(WeightId::Temporal, m.w_temporal) : m.w_temporal;
    std::vector<float> a1(sz(B, F1 * C, T));
    conv_temporal_fwd(cache.x.data(), w1.data(), a1.data(), B, C, T, F1, cfg.temporal_kernel);
    bn_fwd_filters(a1.data(), m.bn1, train_mode, cfg.bn_eps, cache.xhat1.data(), cache.y1.data(),
                   cache.mu1.data(), cache.var1.data(), B, F1, C, T);
    if (q) qat->fq_activation(ActId::PostBn1, cache.y1);

    // conv2 + bn2 + relu + pool + dropout
    const std::vector<float>& w2 = q ? qat->fq_weights(WeightId::Spatial, m.w_spatial) : m.w_spatial;
    std::vector<float> a2(sz(B, M, T));
    conv_spatial_fwd(cache.y1.data(), w2.data(), a2.data(), B, F1, C, T, cfg.spatial_depth_multiplier);
    bn_fwd_filters(a2.data(), m.bn2, train_mode, cfg.bn_eps, cache.xhat2.data(), cache.y2.data(),
                   cache.mu2.data(), cache.var2.data(), B, M, 1, T);
    for (std::size_t i = 0; i < cache.r2.size(); ++i) cache.r2[i] = cache.y2[i] > 0.0f ? cache.y2[i] : 0.0f;
    if (q) qat->fq_activation(ActId::PostRelu1, cache.r2);
    avgpool_fwd(cache.r2.data(), cache.p1.data(), B, M, T, cfg.pool1);
    if (q) qat->fq_activation(ActId::PostPool1, cache.p1);

    const bool do_drop = train_mode && cfg.dropout_rate > 0.0f;
    const float keep = 1.0f - cfg.dropout_rate;
    if (do_drop) {
        for (std::size_t i = 0; i < cache.drop1.size(); ++i)
            cache.drop1[i] = rng->next_float() < keep ? 1.0f / keep : 0.0f;
        for (std::size_t i = 0; i < cache.d1.size(); ++i) cache.d1[i] = cache.p1[i] * cache.drop1[i];
    } else {
        std::fill(cache.drop1.begin(), cache.drop1.end(), 1.0f);
        cache.d1 = cache.p1;
    }

    // separable conv + bn3 + relu + pool + dropout
    const std::vector<float>& w3 = q ? qat->fq_weights(WeightId::SepDepth, m.w_sep_depth) : m.w_sep_depth;
    conv_sep_depth_fwd(cache.d1.data(), w3.data(), cache.a3.data(), B, M, T1, cfg.separable_kernel);
    if (q) qat->fq_activation(ActId::PostSepDepth, cache.a3);
    const std::vector<float>& w4 = q ? qat->fq_weights(WeightId::SepPoint, m.w_sep_point) : m.w_sep_point;
    std::vector<float> a4(sz(B, M, T1));
    conv_point_fwd(cache.a3.data(), w4.data(), a4.data(), B, M, T1);
    bn_fwd_filters(a4.data(), m.bn3, train_mode, cfg.bn_eps, cache.xhat3.data(), cache.y3.data(),
                   cache.mu3.data(), cache.var3.data(), B, M, 1, T1);
    for (std::size_t i = 0; i < cache.r3.size(); ++i) cache.r3[i] = cache.y3[i] > 0.0f ? cache.y3[i] : 0.0f;
    if (q) qat->fq_activation(ActId::PostRelu2, cache.r3);
    avgpool_fwd(cache.r3.data(), cache.p2.data(), B, M, T1, cfg.pool2);
    if (q) qat->fq_activation(ActId::PostPool2, cache.p2);

    if (do_drop) {
        for (std::size_t i = 0; i < cache.drop2.size(); ++i)
            cache.drop2[i] = rng->next_float() < keep ? 1.0f / keep : 0.0f;
        for (std::size_t i = 0; i < cache.feat.size(); ++i) cache.feat[i] = cache.p2[i] * cache.drop2[i];
    } else {
        std::fill(cache.drop2.begin(), cache.drop2.end(), 1.0f);
        cache.feat = cache.p2;
    }

    // dense head
    const std::vector<float>& wd = q ? qat->fq_weights(WeightId::Dense, m.w_dense) : m.w_dense;
    for (int i = 0; i < B; ++i)
        for (int c = 0; c < nc; ++c) {
            double acc = m.b_dense[c];
            const float* wrow = &wd[static_cast<std::size_t>(c) * F];
            const float* fv = &cache.feat[static_cast<std::size_t>(i) * F];
            float facc = 0.0f;
            for (int k = 0; k < F; ++k) facc += wrow[k] * fv[k];
            cache.logits[static_cast<std::size_t>(i) * nc + c] = static_cast<float>(acc + facc);
        }

    cache.valid = true;
    ForwardResult out;
    out.logits = cache.logits;
    out.features = cache.p2;
    return out;
}

std::vector<float> infer_logits(const Model& m, const TrialTensor& t, QatContext* qat) {
    Batch b;
    b.trials = {&t};
    b.labels = {t.label};
    ForwardCache cache;
    return forward(m, b, false, cache, nullptr, qat).logits;
}

// ---------------------------------------------------------------
// Loss
// ---------------------------------------------------------------

void softmax_rows(const std::vector<float>& logits, int n_classes, std::vector<float>& probs) {
    const int rows = static_cast<int>(logits.size()) / n_classes;
    probs.resize(logits.size());
    for (int r = 0; r < rows; ++r) {
        const float* z = &logits[static_cast<std::size_t>(r) * n_classes];
        float* p = &probs[static_cast<std::size_t>(r) * n_classes];
        float zmax = z[0];
        for (int c = 1; c < n_classes; ++c) zmax = std::max(zmax, z[c]);
        double s = 0.0;
        for (int c = 0; c < n_classes; ++c) {
            p[c] = std::exp(z[c] - zmax);
            s += p[c];
        }
        const float inv = static_cast<float>(1.0 / s);
        for (int c = 0; c < n_classes; ++c) p[c] *= inv;
    }
}

double cross_entropy(const std::vector<float>& logits, const std::vector<int>& labels, int n_classes,
                     std::vector<float>* dlogits) {
    const int B = static_cast<int>(labels.size());
    if (static_cast<int>(logits.size()) != B * n_classes) throw ShapeError("logits/labels size mismatch");
    for (int lb : labels)
        if (lb < 0 || lb >= n_classes) throw DataError("label out of range");

    std::vector<float> probs;
    softmax_rows(logits, n_classes, probs);
    double loss = 0.0;
    if (dlogits) dlogits->assign(logits.size(), 0.0f);
    for (int i = 0; i < B; ++i) {
        const float* p = &probs[static_cast<std::size_t>(i) * n_classes];
        loss += -std::log(std::max(1e-30, static_cast<double>(p[labels[i]])));
        if (dlogits) {
            float* d = &(*dlogits)[static_cast<std::size_t>(i) * n_classes];
            for (int c = 0; c < n_classes; ++c) d[c] = (p[c] - (c == labels[i] ? 1.0f : 0.0f)) / B;
        }
    }
    return loss / B;
}

// ---------------------------------------------------------------
// Backward
// ---------------------------------------------------------------

namespace {

// scratch pool so the backward pass does not reallocate ~30 MB per batch
struct BackwardScratch {
    std::vector<float> dfeat, dp2, dr3, dy3, da4, da3, dd1, dp1, dr2, dy2, da2, dy1, da1, dx;
};
thread_local BackwardScratch g_bw;

void fit(std::vector<float>& v, std::size_t n) { v.resize(n); }

}  // namespace

ModelGrads backward(const Model& m, const ForwardCache& cache, const std::vector<float>& dlogits, int depth,
                    QatContext* qat) {
    if (!cache.valid) throw StateError("backward requires a cache from a matching forward");
    const bool batch_stats = cache.train_mode;
    const ModelConfig& cfg = m.cfg;
    const int B = cache.batch;
    const int C = cfg.n_channels, T = cfg.n_samples, F1 = cfg.temporal_filters;
    const int M = cfg.spatial_maps(), T1 = cfg.pooled1(), T2 = cfg.pooled2(), F = cfg.feature_len();
    const int nc = cfg.n_classes;
    if (static_cast<int>(dlogits.size()) != B * nc) throw ShapeError("dlogits size mismatch");

    const bool q = qat && qat->enabled();
    ModelGrads g;
    g.resize_like(m);

    const std::vector<float>& wd = q ? qat->fq_weights(WeightId::Dense, m.w_dense) : m.w_dense;

    // dense
    std::vector<float>& dfeat = g_bw.dfeat;
    dfeat.assign(static_cast<std::size_t>(B) * F, 0.0f);
    for (int i = 0; i < B; ++i) {
        const float* fv = &cache.feat[static_cast<std::size_t>(i) * F];
        float* dfv = &dfeat[static_cast<std::size_t>(i) * F];
        for (int c = 0; c < nc; ++c) {
            const float dz = dlogits[static_cast<std::size_t>(i) * nc + c];
            g.b_dense[c] += dz;
            float* gw = &g.w_dense[static_cast<std::size_t>(c) * F];
            const float* wrow = &wd[static_cast<std::size_t>(c) * F];
            for (int k = 0; k < F; ++k) {
                gw[k] += dz * fv[k];
                dfv[k] += dz * wrow[k];
            }
        }
    }
    if (q) qat->bw_weights(WeightId::Dense, m.w_dense, g.w_dense);

    // dropout 2 + pool 2 + relu 2
    std::vector<float>& dp2 = g_bw.dp2;
    fit(dp2, dfeat.size());
    for (std::size_t i = 0; i < dp2.size(); ++i) dp2[i] = dfeat[i] * cache.drop2[i];
    if (q) qat->bw_activation(ActId::PostPool2, dp2);
    std::vector<float>& dr3 = g_bw.dr3;
    fit(dr3, static_cast<std::size_t>(B) * M * T1);
    avgpool_bwd(dp2.data(), dr3.data(), B, M, T1, cfg.pool2);
    if (q) qat->bw_activation(ActId::PostRelu2, dr3);
    std::vector<float>& dy3 = g_bw.dy3;
    fit(dy3, dr3.size());
    for (std::size_t i = 0; i < dy3.size(); ++i) dy3[i] = cache.y3[i] > 0.0f ? dr3[i] : 0.0f;

    // bn3
    std::vector<float>& da4 = g_bw.da4;
    fit(da4, dy3.size());
    bn_bwd_filters(cache.xhat3.data(), dy3.data(), m.bn3, batch_stats ? cache.var3.data() : m.bn3.running_var.data(),
                   batch_stats, cfg.bn_eps, g.bn3_gamma.data(), g.bn3_beta.data(), da4.data(), B, M, 1, T1);

    // pointwise conv
    const std::vector<float>& w4 = q ? qat->fq_weights(WeightId::SepPoint, m.w_sep_point) : m.w_sep_point;
    std::vector<float>& da3 = g_bw.da3;
    fit(da3, da4.size());
    conv_point_bwd(cache.a3.data(), w4.data(), da4.data(), g.w_sep_point.data(), da3.data(), B, M, T1);
    if (q) qat->bw_weights(WeightId::SepPoint, m.w_sep_point, g.w_sep_point);
    if (q) qat->bw_activation(ActId::PostSepDepth, da3);

    // depthwise temporal conv
    const std::vector<float>& w3 = q ? qat->fq_weights(WeightId::SepDepth, m.w_sep_depth) : m.w_sep_depth;
    std::vector<float>& dd1 = g_bw.dd1;
    fit(dd1, da3.size());
    conv_sep_depth_bwd(cache.d1.data(), w3.data(), da3.data(), g.w_sep_depth.data(), dd1.data(), B, M, T1,
                       cfg.separable_kernel);
    if (q) qat->bw_weights(WeightId::SepDepth, m.w_sep_depth, g.w_sep_depth);

    // dropout 1 + pool 1 + relu 1
    std::vector<float>& dp1 = g_bw.dp1;
    fit(dp1, dd1.size());
    for (std::size_t i = 0; i < dp1.size(); ++i) dp1[i] = dd1[i] * cache.drop1[i];
    if (q) qat->bw_activation(ActId::PostPool1, dp1);
    std::vector<float>& dr2 = g_bw.dr2;
    fit(dr2, static_cast<std::size_t>(B) * M * T);
    avgpool_bwd(dp1.data(), dr2.data(), B, M, T, cfg.pool1);
    if (q) qat->bw_activation(ActId::PostRelu1, dr2);
    std::vector<float>& dy2 = g_bw.dy2;
    fit(dy2, dr2.size());
    for (std::size_t i = 0; i < dy2.size(); ++i) dy2[i] = cache.y2[i] > 0.0f ? dr2[i] : 0.0f;

    // bn2
    std::vector<float>& da2 = g_bw.da2;
    fit(da2, dy2.size());
    bn_bwd_filters(cache.xhat2.data(), dy2.data(), m.bn2, batch_stats ? cache.var2.data() : m.bn2.running_var.data(),
                   batch_stats, cfg.bn_eps, g.bn2_gamma.data(), g.bn2_beta.data(), da2.data(), B, M, 1, T);

    // spatial conv
    const std::vector<float>& w2 = q ? qat->fq_weights(WeightId::Spatial, m.w_spatial) : m.w_spatial;
    std::vector<float>& dy1 = g_bw.dy1;
    fit(dy1, static_cast<std::size_t>(B) * F1 * C * T);
    conv_spatial_bwd(cache.y1.data(), w2.data(), da2.data(), g.w_spatial.data(), dy1.data(), B, F1, C, T,
                     cfg.spatial_depth_multiplier);
    if (q) qat->bw_weights(WeightId::Spatial, m.w_spatial, g.w_spatial);
    if (q) qat->bw_activation(ActId::PostBn1, dy1);

    // bn1
    std::vector<float>& da1 = g_bw.da1;
    fit(da1, dy1.size());
    bn_bwd_filters(cache.xhat1.data(), dy1.data(), m.bn1, batch_stats ? cache.var1.data() : m.bn1.running_var.data(),
                   batch_stats, cfg.bn_eps, g.bn1_gamma.data(), g.bn1_beta.data(), da1.data(), B, F1, C, T);

    // temporal conv
    conv_temporal_bwd_w(cache.x.data(), da1.data(), g.w_temporal.data(), B, C, T, F1, cfg.temporal_kernel);
    if (q) qat->bw_weights(WeightId::Temporal, m.w_temporal, g.w_temporal);
    if (q && qat->wants_input_grad()) {
        const std::vector<float>& w1 = qat->fq_weights(WeightId::Temporal, m.w_temporal);
        std::vector<float>& dx = g_bw.dx;
        fit(dx, static_cast<std::size_t>(B) * C * T);
        conv_temporal_bwd_x(w1.data(), da1.data(), dx.data(), B, C, T, F1, cfg.temporal_kernel);
        qat->bw_activation(ActId::Input, dx);
    }

    // adaptation-depth mask
    if (depth < 6) {
        for (auto& ref : grad_refs(g, m)) {
            if (!group_trainable(ref.group, depth)) std::fill(ref.data, ref.data + ref.size, 0.0f);
        }
    }
    return g;
}

// ---------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------

AdamState AdamState::make(const Model& model, float lr) {
    AdamState s;
    s.lr = lr;
    Model& m = const_cast<Model&>(model);
    std::size_t n = 0;
    for (const auto& ref : param_refs(m)) n += ref.size;
    s.m.assign(n, 0.0f);
    s.v.assign(n, 0.0f);
    return s;
}

void adam_step(AdamState& state, Model& model, ModelGrads& grads, int depth) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    auto prefs = param_refs(model);
    auto grefs = grad_refs(grads, model);
    std::size_t off = 0;
    for (std::size_t a = 0; a < prefs.size(); ++a) {
        const auto& pr = prefs[a];
        const auto& gr = grefs[a];
        if (group_trainable(pr.group, depth)) {
            for (std::size_t i = 0; i < pr.size; ++i) {
                float& mm = state.m[off + i];
                float& vv = state.v[off + i];
                const float gg = gr.data[i];
                mm = state.beta1 * mm + (1.0f - state.beta1) * gg;
                vv = state.beta2 * vv + (1.0f - state.beta2) * gg * gg;
                const double mh = mm / bc1;
                const double vh = vv / bc2;
                pr.data[i] -= static_cast<float>(state.lr * mh / (std::sqrt(vh) + state.eps));
            }
        }
        off += pr.size;
    }
}

// ---------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------

namespace {
inline float state_lr(const AdamState& s) { return s.lr; }
}  // namespace

std::vector<double> train(Model& m, const TrialList& data, const std::vector<int>& labels,
                          const TrainOptions& opts, Rng rng) {
    if (data.empty()) throw DataError("empty training set");
    if (labels.size() != data.size()) throw ShapeError("labels size mismatch");
    const int n = static_cast<int>(data.size());
    const int bs = std::max(1, opts.batch_size);

    AdamState local_adam;
    AdamState* adam = opts.adam;
    if (!adam) {
        local_adam = AdamState::make(m, opts.lr);
        adam = &local_adam;
    }

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> curve;
    curve.reserve(opts.epochs);
    ForwardCache cache;
    std::vector<float> dlogits;

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (int start = 0; start < n; start += bs) {
            const int bn = std::min(bs, n - start);
            Batch batch;
            batch.trials.reserve(bn);
            batch.labels.reserve(bn);
            for (int i = 0; i < bn; ++i) {
                batch.trials.push_back(data[order[start + i]]);
                batch.labels.push_back(labels[order[start + i]]);
            }

            forward(m, batch, true, cache, &rng, opts.qat);

            double loss;
            if (opts.loss) {
                loss = opts.loss->logits_loss(cache.logits, batch.labels, m.cfg.n_classes, dlogits, batch);
            } else {
                loss = cross_entropy(cache.logits, batch.labels, m.cfg.n_classes, &dlogits);
            }

            ModelGrads grads = backward(m, cache, dlogits, opts.depth, opts.qat);
            if (opts.loss) loss += opts.loss->param_penalty(m, grads);

            if (opts.abort_on_nan && !std::isfinite(loss))
                throw StateError("training diverged: non-finite loss at epoch " + std::to_string(epoch));

            // fold this batch's statistics into the running estimates
            {
                const double n1 = static_cast<double>(bn) * m.cfg.n_channels * m.cfg.n_samples;
                const double n2 = static_cast<double>(bn) * m.cfg.n_samples;
                const double n3 = static_cast<double>(bn) * m.cfg.pooled1();
                const float mom = m.cfg.bn_momentum;
                auto upd = [mom](BatchNormParams& bnp, const std::vector<float>& mu, const std::vector<float>& var,
                                 double cnt) {
                    const double unbias = cnt > 1.5 ? cnt / (cnt - 1.0) : 1.0;
                    for (std::size_t i = 0; i < bnp.running_mean.size(); ++i) {
                        bnp.running_mean[i] = (1.0f - mom) * bnp.running_mean[i] + mom * mu[i];
                        bnp.running_var[i] =
                            static_cast<float>((1.0f - mom) * bnp.running_var[i] + mom * var[i] * unbias);
                    }
                };
                upd(m.bn1, cache.mu1, cache.var1, n1);
                upd(m.bn2, cache.mu2, cache.var2, n2);
                upd(m.bn3, cache.mu3, cache.var3, n3);
            }

            adam_step(*adam, m, grads, opts.depth);
            if (opts.qat && opts.qat->enabled()) opts.qat->on_step(state_lr(*adam));
            epoch_loss += loss * bn;
        }
        curve.push_back(epoch_loss / n);
    }
    return curve;
}

std::vector<double> train(Model& m, const TrialList& data, const TrainOptions& opts, Rng rng) {
    std::vector<int> labels(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) labels[i] = data[i]->label;
    return train(m, data, labels, opts, rng);
}

// ---------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------

long ConfusionMatrix::total() const {
    long s = 0;
    for (long c : counts) s += c;
    return s;
}

long ConfusionMatrix::correct() const {
    long s = 0;
    for (int i = 0; i < n_classes; ++i) s += at(i, i);
    return s;
}

double ConfusionMatrix::accuracy_pct() const {
    const long t = total();
    return t == 0 ? 0.0 : 100.0 * static_cast<double>(correct()) / static_cast<double>(t);
}

EvalResult evaluate(const Model& m, const TrialList& data, const std::vector<int>& labels, QatContext* qat) {
    if (data.empty()) throw DataError("empty evaluation set");
    const int nc = m.cfg.n_classes;
    EvalResult res;
    res.confusion.n_classes = nc;
    res.confusion.counts.assign(static_cast<std::size_t>(nc) * nc, 0);
    res.predictions.resize(data.size());

    ForwardCache cache;
    const int chunk = 16;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        const std::size_t end = std::min(data.size(), start + chunk);
        Batch b;
        for (std::size_t i = start; i < end; ++i) {
            b.trials.push_back(data[i]);
            b.labels.push_back(labels[i]);
        }
        ForwardResult fr = forward(m, b, false, cache, nullptr, qat);
        for (std::size_t i = start; i < end; ++i) {
            const float* z = &fr.logits[(i - start) * nc];
            int arg = 0;
            for (int c = 1; c < nc; ++c)
                if (z[c] > z[arg]) arg = c;
            res.predictions[i] = arg;
            res.confusion.at(labels[i], arg) += 1;
        }
    }
    res.accuracy_pct = res.confusion.accuracy_pct();
    return res;
}

EvalResult evaluate(const Model& m, const TrialList& data, QatContext* qat) {
    std::vector<int> labels(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) labels[i] = data[i]->label;
    return evaluate(m, data, labels, qat);
}

// ---------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------

CvResult five_fold_cv(const TrialList& data, const std::vector<int>& labels, const ModelConfig& cfg, int epochs,
                      Rng rng, int batch_size, int folds, bool parallel) {
    if (static_cast<int>(data.size()) < folds) throw DataError("need at least one trial per fold");

    // stratified assignment: deal each class round-robin into folds
    std::vector<int> fold_of(data.size(), -1);
    bool stratified = true;
    {
        Rng arng = rng.split("cv_assign");
        std::vector<std::vector<int>> by_class;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const int lb = labels[i];
            if (lb >= static_cast<int>(by_class.size())) by_class.resize(lb + 1);
            by_class[lb].push_back(static_cast<int>(i));
        }
        for (auto& cls : by_class)
            if (!cls.empty() && static_cast<int>(cls.size()) < folds) stratified = false;

        if (stratified) {
            int next = 0;
            for (auto& cls : by_class) {
                arng.shuffle(cls);
                for (int id : cls) fold_of[id] = (next++) % folds;
            }
        } else {
            std::vector<int> all(data.size());
            std::iota(all.begin(), all.end(), 0);
            arng.shuffle(all);
            for (std::size_t i = 0; i < all.size(); ++i) fold_of[all[i]] = static_cast<int>(i % folds);
        }
    }

    auto run_fold = [&](int k, Rng frng) -> double {
        TrialList tr, va;
        std::vector<int> trl, val;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (fold_of[i] == k) {
                va.push_back(data[i]);
                val.push_back(labels[i]);
            } else {
                tr.push_back(data[i]);
                trl.push_back(labels[i]);
            }
        }
        Model m = init_model(cfg, frng.split("init").next_u64());
        AdamState adam = AdamState::make(m);
        TrainOptions opts;
        opts.epochs = epochs;
        opts.batch_size = batch_size;
        opts.adam = &adam;
        train(m, tr, trl, opts, frng.split("train"));
        return evaluate(m, va, val).accuracy_pct;
    };

    CvResult res;
    res.stratified = stratified;
    res.fold_of = fold_of;
    res.fold_pct.resize(folds);
    if (parallel) {
        std::vector<std::future<double>> futs;
        futs.reserve(folds);
        for (int k = 0; k < folds; ++k) futs.push_back(std::async(std::launch::async, run_fold, k, rng.split("fold", k)));
        for (int k = 0; k < folds; ++k) res.fold_pct[k] = futs[k].get();
    } else {
        for (int k = 0; k < folds; ++k) res.fold_pct[k] = run_fold(k, rng.split("fold", k));
    }
    res.mean_pct = mean_of(res.fold_pct);
    res.std_pct = stddev_of(res.fold_pct);
    return res;
}

// ---------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------

void save_model(const Model& m, const std::string& path) {
    auto os = io::open_out(path);
    io::write_u32(os, kModelMagic);
    io::write_u32(os, kModelVersion);
    const ModelConfig& c = m.cfg;
    for (int v : {c.n_channels, c.n_samples, c.n_classes, c.temporal_filters, c.temporal_kernel,
                  c.spatial_depth_multiplier, c.separable_kernel, c.pool1, c.pool2})
        io::write_i32(os, v);
    io::write_f32(os, c.dropout_rate);
    io::write_f32(os, c.bn_momentum);
    io::write_f32(os, c.bn_eps);

    auto bn_arrays = [&](const BatchNormParams& bn) {
        io::write_f32_array(os, bn.gamma);
        io::write_f32_array(os, bn.beta);
        io::write_f32_array(os, bn.running_mean);
        io::write_f32_array(os, bn.running_var);
    };
    io::write_f32_array(os, m.w_temporal);
    bn_arrays(m.bn1);
    io::write_f32_array(os, m.w_spatial);
    bn_arrays(m.bn2);
    io::write_f32_array(os, m.w_sep_depth);
    io::write_f32_array(os, m.w_sep_point);
    bn_arrays(m.bn3);
    io::write_f32_array(os, m.w_dense);
    io::write_f32_array(os, m.b_dense);
    if (!os) throw LoadError("failed writing model checkpoint: " + path);
}

Model load_model(const std::string& path) {
    auto is = io::open_in(path);
    if (io::read_u32(is) != kModelMagic) throw LoadError("not a model checkpoint: " + path);
    if (io::read_u32(is) != kModelVersion) throw LoadError("unsupported checkpoint version: " + path);
    Model m;
    ModelConfig& c = m.cfg;
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

    auto bn_arrays = [&](BatchNormParams& bn) {
        bn.gamma = io::read_f32_array(is);
        bn.beta = io::read_f32_array(is);
        bn.running_mean = io::read_f32_array(is);
        bn.running_var = io::read_f32_array(is);
    };
    m.w_temporal = io::read_f32_array(is);
    bn_arrays(m.bn1);
    m.w_spatial = io::read_f32_array(is);
    bn_arrays(m.bn2);
    m.w_sep_depth = io::read_f32_array(is);
    m.w_sep_point = io::read_f32_array(is);
    bn_arrays(m.bn3);
    m.w_dense = io::read_f32_array(is);
    m.b_dense = io::read_f32_array(is);
    return m;
}

}  // namespace bmi::nn
