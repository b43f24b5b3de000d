#include "bmi/odl.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "bmi/io_util.hpp"

namespace bmi::odl {

// ---------------------------------------------------------------
// SHA-256 (FIPS 180-4), used for backbone immutability audits
// ---------------------------------------------------------------

namespace {

constexpr std::uint32_t kSha256K[64] = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};

inline std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

}  // namespace

std::array<std::uint8_t, 32> sha256(const void* data, std::size_t len) {
    std::uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                          0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};

    std::vector<std::uint8_t> msg(static_cast<const std::uint8_t*>(data),
                                  static_cast<const std::uint8_t*>(data) + len);
    msg.push_back(0x80);
    while (msg.size() % 64 != 56) msg.push_back(0);
    const std::uint64_t bits = static_cast<std::uint64_t>(len) * 8;
    for (int i = 7; i >= 0; --i) msg.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));

    for (std::size_t off = 0; off < msg.size(); off += 64) {
        std::uint32_t w[64];
        for (int i = 0; i < 16; ++i)
            w[i] = (msg[off + 4 * i] << 24) | (msg[off + 4 * i + 1] << 16) | (msg[off + 4 * i + 2] << 8) |
                   msg[off + 4 * i + 3];
        for (int i = 16; i < 64; ++i) {
            const std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
            const std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16] + s0 + w[i - 7] + s1;
        }
        std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4], f = h[5], g = h[6], hh = h[7];
        for (int i = 0; i < 64; ++i) {
            const std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            const std::uint32_t ch = (e & f) ^ (~e & g);
            const std::uint32_t t1 = hh + s1 + ch + kSha256K[i] + w[i];
            const std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            const std::uint32_t t2 = s0 + maj;
            hh = g;
            g = f;
            f = e;
            e = d + t1;
            d = c;
            c = b;
            b = a;
            a = t1 + t2;
        }
        h[0] += a;
        h[1] += b;
        h[2] += c;
        h[3] += d;
        h[4] += e;
        h[5] += f;
        h[6] += g;
        h[7] += hh;
    }

    std::array<std::uint8_t, 32> out;
    for (int i = 0; i < 8; ++i) {
        out[4 * i] = static_cast<std::uint8_t>(h[i] >> 24);
        out[4 * i + 1] = static_cast<std::uint8_t>(h[i] >> 16);
        out[4 * i + 2] = static_cast<std::uint8_t>(h[i] >> 8);
        out[4 * i + 3] = static_cast<std::uint8_t>(h[i]);
    }
    return out;
}

std::string hex(const std::array<std::uint8_t, 32>& digest) {
    static const char* k = "0123456789abcdef";
    std::string s;
    for (std::uint8_t b : digest) {
        s.push_back(k[b >> 4]);
        s.push_back(k[b & 0xF]);
    }
    return s;
}

// ---------------------------------------------------------------
// FrozenBackbone
// ---------------------------------------------------------------

FrozenBackbone::FrozenBackbone(quant::QuantizedModel qm) : qm_(std::move(qm)) {}

FrozenBackbone FrozenBackbone::load(const std::string& blob_path) {
    return FrozenBackbone(quant::load_quantized(blob_path));
}

Int8Trial FrozenBackbone::quantize_input(const TrialTensor& t) const {
    Int8Trial out;
    out.label = t.label;
    out.samples.resize(t.samples.size());
    for (std::size_t i = 0; i < t.samples.size(); ++i)
        out.samples[i] =
            static_cast<std::int8_t>(std::clamp(std::rintf(t.samples[i] / qm_.s_in), -128.0f, 127.0f));
    return out;
}

std::vector<float> FrozenBackbone::extract_features(const TrialTensor& t) const {
    return quant::int8_forward(qm_, t).features_f32;
}

std::vector<float> FrozenBackbone::extract_features(const Int8Trial& t) const {
    // replay path: the stored int8 trial is already on the input grid
    TrialTensor tt;
    tt.n_channels = qm_.cfg.n_channels;
    tt.n_samples = qm_.cfg.n_samples;
    tt.label = t.label;
    tt.samples.resize(t.samples.size());
    for (std::size_t i = 0; i < t.samples.size(); ++i) tt.samples[i] = t.samples[i] * qm_.s_in;
    return quant::int8_forward(qm_, tt).features_f32;
}

std::array<std::uint8_t, 32> FrozenBackbone::content_hash() const {
    std::ostringstream os(std::ios::binary);
    quant::save_quantized(qm_, os);
    const std::string blob = os.str();
    return sha256(blob.data(), blob.size());
}

// ---------------------------------------------------------------
// TrainableHead
// ---------------------------------------------------------------

TrainableHead TrainableHead::init(int n_classes, int n_features, Rng rng, float lr) {
    TrainableHead h;
    h.n_classes = n_classes;
    h.n_features = n_features;
    h.lr = lr;
    h.w.resize(static_cast<std::size_t>(n_classes) * n_features);
    const double limit = std::sqrt(6.0 / (n_features + n_classes));
    for (auto& v : h.w) v = static_cast<float>(rng.uniform(-limit, limit));
    h.b.assign(n_classes, 0.0f);
    h.mw.assign(h.w.size(), 0.0f);
    h.vw.assign(h.w.size(), 0.0f);
    h.mb.assign(n_classes, 0.0f);
    h.vb.assign(n_classes, 0.0f);
    return h;
}

TrainableHead TrainableHead::from_quantized(const quant::QuantizedModel& qm, float lr) {
    TrainableHead h;
    h.n_classes = qm.cfg.n_classes;
    h.n_features = qm.cfg.feature_len();
    h.lr = lr;
    h.w.resize(static_cast<std::size_t>(h.n_classes) * h.n_features);
    if (qm.int8_head) {
        for (int c = 0; c < h.n_classes; ++c)
            for (int i = 0; i < h.n_features; ++i)
                h.w[static_cast<std::size_t>(c) * h.n_features + i] =
                    qm.wd[static_cast<std::size_t>(c) * h.n_features + i] * qm.sd[c];
    } else {
        h.w = qm.wd_f32;
    }
    h.b = qm.bd;
    h.mw.assign(h.w.size(), 0.0f);
    h.vw.assign(h.w.size(), 0.0f);
    h.mb.assign(h.b.size(), 0.0f);
    h.vb.assign(h.b.size(), 0.0f);
    return h;
}

std::vector<float> TrainableHead::logits(const std::vector<float>& features) const {
    const int batch = static_cast<int>(features.size()) / n_features;
    std::vector<float> out(static_cast<std::size_t>(batch) * n_classes);
    for (int bixd = 0; bixd < batch; ++bixd)
        for (int c = 0; c < n_classes; ++c) {
            float acc = b[c];
            const float* wrow = &w[static_cast<std::size_t>(c) * n_features];
            const float* fv = &features[static_cast<std::size_t>(bixd) * n_features];
            for (int i = 0; i < n_features; ++i) acc += wrow[i] * fv[i];
            out[static_cast<std::size_t>(bixd) * n_classes + c] = acc;
        }
    return out;
}

namespace {

constexpr std::uint32_t kHeadMagic = 0x48494D42;  // "BMIH"

}  // namespace

void save_head(const TrainableHead& h, const std::string& path) {
    auto os = io::open_out(path);
    io::write_u32(os, kHeadMagic);
    io::write_u32(os, 1);
    io::write_i32(os, h.n_classes);
    io::write_i32(os, h.n_features);
    io::write_f32(os, h.lr);
    io::write_f32_array(os, h.w);
    io::write_f32_array(os, h.b);
    if (!os) throw LoadError("failed writing head checkpoint: " + path);
}

TrainableHead load_head(const std::string& path) {
    auto is = io::open_in(path);
    if (io::read_u32(is) != kHeadMagic) throw LoadError("not a head checkpoint: " + path);
    if (io::read_u32(is) != 1) throw LoadError("unsupported head version: " + path);
    TrainableHead h;
    h.n_classes = io::read_i32(is);
    h.n_features = io::read_i32(is);
    h.lr = io::read_f32(is);
    h.w = io::read_f32_array(is);
    h.b = io::read_f32_array(is);
    if (h.w.size() != static_cast<std::size_t>(h.n_classes) * h.n_features)
        throw LoadError("head shape mismatch in " + path);
    h.mw.assign(h.w.size(), 0.0f);
    h.vw.assign(h.w.size(), 0.0f);
    h.mb.assign(h.b.size(), 0.0f);
    h.vb.assign(h.b.size(), 0.0f);
    return h;
}

OdlStrategy odl_strategy_from_string(const std::string& s) {
    if (s == "tl" || s == "naive_tl" || s == "naive") return OdlStrategy::TL;
    if (s == "er") return OdlStrategy::ER;
    if (s == "lwf") return OdlStrategy::LwF;
    if (s == "ewc") throw UnsupportedError("ewc is not supported on-device");
    throw ConfigError("unknown on-device strategy: " + s);
}

std::string to_string(OdlStrategy s) {
    switch (s) {
        case OdlStrategy::TL: return "tl";
        case OdlStrategy::ER: return "er";
        case OdlStrategy::LwF: return "lwf";
    }
    return "?";
}

// ---------------------------------------------------------------
// Head training
// ---------------------------------------------------------------

void head_gradients(const TrainableHead& head, const std::vector<float>& features,
                    const std::vector<int>& labels, const HeadStepOptions& opts, std::vector<float>& dw,
                    std::vector<float>& db, double& loss) {
    const int batch = static_cast<int>(labels.size());
    if (features.size() != static_cast<std::size_t>(batch) * head.n_features)
        throw ShapeError("feature batch size mismatch");

    std::vector<float> z = head.logits(features);
    std::vector<float> dz;
    if (opts.strategy == OdlStrategy::LwF) {
        if (!opts.old_logits) throw StateError("distillation step without stored teacher outputs");
        loss = cl::lwf_loss(z, *opts.old_logits, labels, head.n_classes, opts.lwf_lambda_o,
                            opts.lwf_temperature, false, &dz);
    } else {
        loss = nn::cross_entropy(z, labels, head.n_classes, &dz);
    }

    dw.assign(head.w.size(), 0.0f);
    db.assign(head.b.size(), 0.0f);
    for (int bi = 0; bi < batch; ++bi) {
        const float* fv = &features[static_cast<std::size_t>(bi) * head.n_features];
        for (int c = 0; c < head.n_classes; ++c) {
            const float g = dz[static_cast<std::size_t>(bi) * head.n_classes + c];
            db[c] += g;
            float* dwrow = &dw[static_cast<std::size_t>(c) * head.n_features];
            for (int i = 0; i < head.n_features; ++i) dwrow[i] += g * fv[i];
        }
    }
}

double head_train_step(TrainableHead& head, const std::vector<float>& features, const std::vector<int>& labels,
                       const HeadStepOptions& opts) {
    std::vector<float> dw, db;
    double loss = 0.0;
    head_gradients(head, features, labels, opts, dw, db, loss);

    head.step += 1;
    const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(head.step));
    const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(head.step));
    auto adam = [&](std::vector<float>& p, std::vector<float>& m, std::vector<float>& v,
                    const std::vector<float>& g) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = 0.9f * m[i] + 0.1f * g[i];
            v[i] = 0.999f * v[i] + 0.001f * g[i] * g[i];
            p[i] -= static_cast<float>(head.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + 1e-8));
        }
    };
    adam(head.w, head.mw, head.vw, dw);
    adam(head.b, head.mb, head.vb, db);
    return loss;
}

Prediction head_infer(const FrozenBackbone& bb, const TrainableHead& head, const TrialTensor& t) {
    Prediction p;
    p.logits = head.logits(bb.extract_features(t));
    p.label = 0;
    for (int c = 1; c < head.n_classes; ++c)
        if (p.logits[c] > p.logits[p.label]) p.label = c;
    return p;
}

// ---------------------------------------------------------------
// Engine
// ---------------------------------------------------------------

OdlEngine::OdlEngine(const FrozenBackbone& bb, TrainableHead head, const OdlConfig& cfg)
    : bb_(bb), head_(std::move(head)), cfg_(cfg), buffer_(cfg.er_capacity, Rng(cfg.seed).split("odl_reservoir")),
      rng_(Rng(cfg.seed).split("odl_train")) {
    if (head_.n_features != bb.feature_len()) throw ShapeError("head/backbone feature length mismatch");
}

OdlPhaseResult OdlEngine::adapt(const cl::Session& new_session) {
    cl::SessionSplit split = cl::split_session(new_session);
    OdlPhaseResult res;

    auto eval_acc = [&]() {
        int correct = 0;
        for (const TrialTensor* t : split.test)
            if (head_infer(bb_, head_, *t).label == t->label) ++correct;
        return 100.0 * correct / static_cast<double>(split.test.size());
    };
    res.acc_before_pct = eval_acc();

    // on-device representation of the phase's training set
    std::vector<Int8Trial> current;
    current.reserve(split.train.size());
    for (const TrialTensor* t : split.train) current.push_back(bb_.quantize_input(*t));

    const bool use_er = cfg_.strategy == OdlStrategy::ER && cfg_.er_capacity > 0;
    const bool use_lwf = cfg_.strategy == OdlStrategy::LwF && cfg_.lwf_lambda_o != 0.0;
    const TrainableHead old_head = head_;  // LwF teacher snapshot

    // working list: replayed trials first (chronological), then the new session
    std::vector<const Int8Trial*> items;
    for (const Int8Trial& t : buffer_.items()) items.push_back(&t);
    for (const Int8Trial& t : current) items.push_back(&t);

    // feature cache (optional for replay-heavy settings; defaults to recompute)
    std::vector<std::vector<float>> cached;
    if (cfg_.er_cache_features) {
        cached.reserve(items.size());
        for (const Int8Trial* t : items) cached.push_back(bb_.extract_features(*t));
    }

    std::vector<int> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    const int nf = head_.n_features;

    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
        rng_.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
            const int bsz = static_cast<int>(end - start);
            std::vector<float> feats(static_cast<std::size_t>(bsz) * nf);
            std::vector<int> labels(bsz);
            for (int i = 0; i < bsz; ++i) {
                const int id = order[start + i];
                labels[i] = items[id]->label;
                if (cfg_.er_cache_features) {
                    std::copy(cached[id].begin(), cached[id].end(), feats.begin() + static_cast<std::size_t>(i) * nf);
                } else {
                    auto f = bb_.extract_features(*items[id]);
                    std::copy(f.begin(), f.end(), feats.begin() + static_cast<std::size_t>(i) * nf);
                }
            }
            HeadStepOptions hopts;
            hopts.strategy = cfg_.strategy;
            hopts.lwf_lambda_o = cfg_.lwf_lambda_o;
            hopts.lwf_temperature = cfg_.lwf_temperature;
            std::vector<float> old_logits;
            if (use_lwf) {
                old_logits = old_head.logits(feats);
                hopts.old_logits = &old_logits;
            } else {
                hopts.strategy = cfg_.strategy == OdlStrategy::LwF ? OdlStrategy::TL : cfg_.strategy;
            }
            epoch_loss += head_train_step(head_, feats, labels, hopts) * bsz;
        }
        res.loss_curve.push_back(epoch_loss / static_cast<double>(items.size()));
    }

    if (use_er)
        for (const Int8Trial& t : current) buffer_.offer(t);

    res.acc_after_pct = eval_acc();
    return res;
}

// ---------------------------------------------------------------
// Memory accounting
// ---------------------------------------------------------------

std::size_t MemoryBudget::working_total() const {
    return feature_bytes_int8 + feature_bytes_f32 + head_param_bytes + optimizer_state_bytes +
           old_head_param_bytes + old_head_logit_bytes + activation_scratch_bytes;
}

std::size_t MemoryBudget::storage_total() const { return backbone_blob_bytes + replay_buffer_bytes; }

MemoryBudget memory_report(const nn::ModelConfig& cfg, OdlStrategy strategy, std::size_t er_capacity,
                           int batch_size, bool er_cache_features, std::size_t backbone_bytes) {
    MemoryBudget b;
    const std::size_t feat = static_cast<std::size_t>(cfg.feature_len());
    const std::size_t head_params = feat * cfg.n_classes + cfg.n_classes;

    b.feature_bytes_int8 = feat;           // 32x29 int8 map
    b.feature_bytes_f32 = feat * 4;        // expanded fp32 vector
    b.head_param_bytes = head_params * 4;
    b.optimizer_state_bytes = 2 * head_params * 4;  // Adam moments
    if (strategy == OdlStrategy::LwF) {
        b.old_head_param_bytes = head_params * 4;
        b.old_head_logit_bytes = static_cast<std::size_t>(batch_size) * cfg.n_classes * 4;
    }

    // largest adjacent int8 tensor pair in the backbone (input + first conv out)
    const std::size_t in_bytes = static_cast<std::size_t>(cfg.n_channels) * cfg.n_samples;
    const std::size_t conv1_bytes =
        static_cast<std::size_t>(cfg.temporal_filters) * cfg.n_channels * cfg.n_samples;
    b.activation_scratch_bytes = in_bytes + conv1_bytes;

    b.backbone_blob_bytes = backbone_bytes;
    if (strategy == OdlStrategy::ER) {
        b.replay_buffer_bytes = er_cache_features
                                    ? er_capacity * (feat * 4 + 4)  // cached fp32 features + label
                                    : er_capacity * in_bytes;       // int8 trials
    }
    return b;
}

std::string memory_report_json(const MemoryBudget& b) {
    std::ostringstream os;
    os << "{\n"
       << "  \"feature_bytes_int8\": " << b.feature_bytes_int8 << ",\n"
       << "  \"feature_bytes_f32\": " << b.feature_bytes_f32 << ",\n"
       << "  \"head_param_bytes\": " << b.head_param_bytes << ",\n"
       << "  \"optimizer_state_bytes\": " << b.optimizer_state_bytes << ",\n"
       << "  \"old_head_param_bytes\": " << b.old_head_param_bytes << ",\n"
       << "  \"old_head_logit_bytes\": " << b.old_head_logit_bytes << ",\n"
       << "  \"activation_scratch_bytes\": " << b.activation_scratch_bytes << ",\n"
       << "  \"backbone_blob_bytes\": " << b.backbone_blob_bytes << ",\n"
       << "  \"replay_buffer_bytes\": " << b.replay_buffer_bytes << ",\n"
       << "  \"working_total\": " << b.working_total() << ",\n"
       << "  \"storage_total\": " << b.storage_total() << "\n"
       << "}\n";
    return os.str();
}

OpCounts op_counts(const nn::ModelConfig& cfg) {
    OpCounts oc;
    const std::uint64_t f1 = cfg.temporal_filters, c = cfg.n_channels, t = cfg.n_samples;
    const std::uint64_t m = cfg.spatial_maps(), t1 = cfg.pooled1();
    oc.backbone_macs = f1 * c * t * cfg.temporal_kernel  // temporal conv
                       + m * c * t                       // spatial depthwise
                       + m * t1 * cfg.separable_kernel   // separable depthwise
                       + m * m * t1;                     // pointwise
    oc.head_forward_macs = static_cast<std::uint64_t>(cfg.feature_len()) * cfg.n_classes;
    oc.head_backward_macs = oc.head_forward_macs;  // dW accumulation dominates
    return oc;
}

}  // namespace bmi::odl
