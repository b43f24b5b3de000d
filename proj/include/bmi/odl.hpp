#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bmi/cl.hpp"
#include "bmi/quant.hpp"

namespace bmi::odl {

using dsp::TrialTensor;

// ---------------------------------------------------------------
// Simulated on-device runtime: a frozen int8 backbone feeds a small
// trainable fp32 classifier head. Only the head ever changes.
// ---------------------------------------------------------------

// Input trial quantized onto the backbone's input grid; this is what the
// on-device replay buffer stores (1 byte per sample).
struct Int8Trial {
    std::vector<std::int8_t> samples;  // [channels][samples]
    int label = 0;
};

class FrozenBackbone {
public:
    explicit FrozenBackbone(quant::QuantizedModel qm);
    static FrozenBackbone load(const std::string& blob_path);

    const nn::ModelConfig& config() const { return qm_.cfg; }
    int feature_len() const { return qm_.cfg.feature_len(); }

    Int8Trial quantize_input(const TrialTensor& t) const;

    // int8 inference up to the head, dequantized to fp32 (length 928)
    std::vector<float> extract_features(const TrialTensor& t) const;
    std::vector<float> extract_features(const Int8Trial& t) const;

    // SHA-256 of the serialized backbone, for immutability audits
    std::array<std::uint8_t, 32> content_hash() const;

private:
    quant::QuantizedModel qm_;
};

struct TrainableHead {
    int n_classes = 0;
    int n_features = 0;
    std::vector<float> w;  // [n_classes][n_features]
    std::vector<float> b;  // [n_classes]
    // Adam state
    float lr = 1e-3f;
    long step = 0;
    std::vector<float> mw, vw, mb, vb;

    static TrainableHead init(int n_classes, int n_features, Rng rng, float lr = 1e-3f);
    // head taken from a quantized model (dequantized when stored int8)
    static TrainableHead from_quantized(const quant::QuantizedModel& qm, float lr = 1e-3f);

    std::vector<float> logits(const std::vector<float>& features) const;
};

void save_head(const TrainableHead& h, const std::string& path);
TrainableHead load_head(const std::string& path);

enum class OdlStrategy { TL, ER, LwF };
OdlStrategy odl_strategy_from_string(const std::string& s);
std::string to_string(OdlStrategy s);

struct HeadStepOptions {
    OdlStrategy strategy = OdlStrategy::TL;
    // distillation term against the stored pre-phase head outputs
    double lwf_lambda_o = 1.0;
    double lwf_temperature = 2.0;
    const std::vector<float>* old_logits = nullptr;  // [batch][n_classes], LwF only
};

// One forward+backward+Adam update on the head. features: [batch][n_features].
// EWC is deliberately not available on-device.
double head_train_step(TrainableHead& head, const std::vector<float>& features,
                       const std::vector<int>& labels, const HeadStepOptions& opts);

// gradients only, exposed for verification
void head_gradients(const TrainableHead& head, const std::vector<float>& features,
                    const std::vector<int>& labels, const HeadStepOptions& opts, std::vector<float>& dw,
                    std::vector<float>& db, double& loss);

struct Prediction {
    int label = 0;
    std::vector<float> logits;
};

Prediction head_infer(const FrozenBackbone& bb, const TrainableHead& head, const TrialTensor& t);

// ---------------------------------------------------------------
// On-device session adaptation
// ---------------------------------------------------------------

struct OdlConfig {
    OdlStrategy strategy = OdlStrategy::TL;
    std::size_t er_capacity = 20;
    bool er_cache_features = false;  // default: replay trials through the backbone
    double lwf_lambda_o = 1.0;
    double lwf_temperature = 2.0;
    int epochs = 50;
    int batch_size = 10;
    float lr = 1e-3f;
    std::uint64_t seed = 1;
};

struct OdlPhaseResult {
    double acc_before_pct = 0.0;  // frozen head on the new session's test split
    double acc_after_pct = 0.0;
    std::vector<double> loss_curve;
};

// Runs head-only adaptation on one new session (60/40 chronological split),
// optionally replaying an int8 trial buffer carried across phases.
class OdlEngine {
public:
    OdlEngine(const FrozenBackbone& bb, TrainableHead head, const OdlConfig& cfg);

    OdlPhaseResult adapt(const cl::Session& new_session);
    const TrainableHead& head() const { return head_; }
    const cl::ReplayBuffer<Int8Trial>& buffer() const { return buffer_; }

private:
    const FrozenBackbone& bb_;
    TrainableHead head_;
    OdlConfig cfg_;
    cl::ReplayBuffer<Int8Trial> buffer_;
    Rng rng_;
};

// ---------------------------------------------------------------
// Memory accounting (bytes, exact)
// ---------------------------------------------------------------

struct MemoryBudget {
    // working tier: what the adaptation step must hold in fast memory
    std::size_t feature_bytes_int8 = 0;   // 32x29 int8 map
    std::size_t feature_bytes_f32 = 0;    // expanded 928-vector
    std::size_t head_param_bytes = 0;
    std::size_t optimizer_state_bytes = 0;
    std::size_t old_head_param_bytes = 0;  // LwF teacher head snapshot
    std::size_t old_head_logit_bytes = 0;  // LwF teacher outputs per batch
    std::size_t activation_scratch_bytes = 0;  // largest int8 intermediate pair
    // storage tier
    std::size_t backbone_blob_bytes = 0;
    std::size_t replay_buffer_bytes = 0;  // capacity x channels x samples x 1 byte

    std::size_t working_total() const;
    std::size_t storage_total() const;
};

MemoryBudget memory_report(const nn::ModelConfig& cfg, OdlStrategy strategy, std::size_t er_capacity,
                           int batch_size = 10, bool er_cache_features = false,
                           std::size_t backbone_bytes = 0);

std::string memory_report_json(const MemoryBudget& b);

// static operation counts per trial (multiply-accumulate totals)
struct OpCounts {
    std::uint64_t backbone_macs = 0;
    std::uint64_t head_forward_macs = 0;
    std::uint64_t head_backward_macs = 0;
};
OpCounts op_counts(const nn::ModelConfig& cfg);

// SHA-256 used for the backbone immutability audit
std::array<std::uint8_t, 32> sha256(const void* data, std::size_t len);
std::string hex(const std::array<std::uint8_t, 32>& digest);

}  // namespace bmi::odl
