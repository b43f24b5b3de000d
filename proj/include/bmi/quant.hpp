#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bmi/nn.hpp"

namespace bmi::quant {

using dsp::TrialTensor;
using nn::ActId;
using nn::Model;
using nn::WeightId;

// ---------------------------------------------------------------
// Quantizers. Everything is 8-bit: weights per output channel with symmetric
// thresholds, activations per tensor. Thresholds are held as log2(t) and
// trained by backpropagation; the effective scale snaps to a power of two,
// s = 2^ceil(log2 t) / 128, so requantization stays cheap on integer targets.
// ---------------------------------------------------------------

struct QuantSpec {
    int bits = 8;  // fixed; kept for the record
};

struct ClipBounds {
    std::vector<float> lower, upper;  // per channel (size 1 for activations)
    bool trainable = true;
};

struct Quantizer {
    std::vector<float> log2_t;
    bool trainable = true;
    // Adam state and per-batch gradient accumulator for the thresholds
    std::vector<float> m, v, grad;
    long step = 0;

    void init(std::size_t channels, float threshold);
    float scale(std::size_t channel = 0) const;  // 2^ceil(log2 t) / 128
    ClipBounds bounds() const;                   // symmetric +-t
};

// quantize-dequantize one value on the grid of `scale` (round to nearest even)
float fake_quant_value(float x, float scale);

// Whole-tensor fake quantization; per-channel when quantizer has >1 channel
// (outer dimension = channel). Pure function of (x, q).
void fake_quant(const std::vector<float>& x, const Quantizer& q, std::vector<float>& out);

struct QatConfig {
    bool quantize_head = true;       // fake-quantize the dense layer as well
    bool train_input_threshold = true;
    float threshold_lr = 1e-3f;
};

// All quantizer state for one model.
struct QatState {
    QatConfig cfg;
    Quantizer weights[5];      // indexed by WeightId
    Quantizer activations[7];  // indexed by ActId

    Quantizer& wq(WeightId id) { return weights[static_cast<int>(id)]; }
    Quantizer& aq(ActId id) { return activations[static_cast<int>(id)]; }
    const Quantizer& wq(WeightId id) const { return weights[static_cast<int>(id)]; }
    const Quantizer& aq(ActId id) const { return activations[static_cast<int>(id)]; }
};

// Weight thresholds start at the per-channel |w| maximum (dead channels fall
// back to 1e-3); activation thresholds start at 1.
QatState init_clip_bounds(const Model& m, const QatConfig& cfg = {});

// nn::QatContext implementation wiring the quantizers into forward/backward.
class FakeQuantContext : public nn::QatContext {
public:
    FakeQuantContext(QatState& state, const Model& model, bool enabled = true)
        : state_(state), model_(model), enabled_(enabled) {}

    bool enabled() const override { return enabled_; }
    void set_enabled(bool e) { enabled_ = e; }

    const std::vector<float>& fq_weights(WeightId id, const std::vector<float>& w) override;
    void fq_activation(ActId id, std::vector<float>& x) override;
    void bw_weights(WeightId id, const std::vector<float>& w, std::vector<float>& dw) override;
    void bw_activation(ActId id, std::vector<float>& dx) override;
    bool wants_input_grad() const override { return state_.cfg.train_input_threshold; }
    void on_step(float lr) override;

private:
    QatState& state_;
    const Model& model_;
    bool enabled_;
    std::vector<float> w_buf_[5];
    std::vector<float> act_pre_[7];  // pre-quantization values kept for backward
};

// Fake-quant training on a pretrained fp32 model: thresholds learn alongside
// the weights; aborts on divergence. Returns the per-epoch loss curve.
std::vector<double> qat_train(Model& m, QatState& qs, const nn::TrialList& data, const nn::TrainOptions& opts,
                              Rng rng);

// ---------------------------------------------------------------
// Integerized model
// ---------------------------------------------------------------

// out = clamp( rne((acc * multiplier + bias) * 2^-shift) ); the bias is
// pre-scaled into the output grid at 2^-shift resolution, so batch-norm
// folding adds no measurable rounding of its own.
struct RequantParams {
    std::vector<std::int32_t> multiplier;  // per output channel (size 1 for pools)
    std::vector<int> shift;
    std::vector<std::int64_t> bias;  // empty when the stage has no additive term
    bool relu = false;
};

struct QuantizedModel {
    nn::ModelConfig cfg;
    bool int8_head = true;
    float s_in = 0.0f;  // input grid
    std::vector<std::int8_t> w1;
    RequantParams rq1;  // conv1 + folded bn1 -> s1
    float s1 = 0;
    std::vector<std::int8_t> w2;
    RequantParams rq2;  // conv2 + folded bn2 + relu -> s2r
    float s2r = 0;
    RequantParams rq_pool1;  // avgpool -> s2
    float s2 = 0;
    std::vector<std::int8_t> w3;
    RequantParams rq3;  // depthwise conv -> s3
    float s3 = 0;
    std::vector<std::int8_t> w4;
    RequantParams rq4;  // pointwise conv + folded bn3 + relu -> s4r
    float s4r = 0;
    RequantParams rq_pool2;  // avgpool -> s4 (feature grid)
    float s4 = 0;
    std::vector<std::int8_t> wd;  // int8 head (empty when int8_head == false)
    std::vector<float> sd;        // per-class weight scales
    std::vector<float> wd_f32;    // fp32 head fallback
    std::vector<float> bd;        // head bias, fp32

    std::size_t backbone_blob_bytes() const;
};

// Folds batch-norm running statistics into the conv scales, integerizes all
// weights, and derives the multiplier/shift requantization pairs. The
// calibration set is a sanity probe: activations far outside the learned grids
// raise ConfigError.
QuantizedModel integerize(const Model& m, const QatState& qs, const nn::TrialList& calibration);

struct Int8Forward {
    std::vector<std::int8_t> features;  // 32x29 on the s4 grid
    std::vector<float> features_f32;    // dequantized, length 928
    std::vector<float> logits;
};

// Integer-only backbone inference (plus the head when integerized).
Int8Forward int8_forward(const QuantizedModel& qm, const TrialTensor& t);

nn::EvalResult int8_evaluate(const QuantizedModel& qm, const nn::TrialList& data);

// versioned little-endian blob
void save_quantized(const QuantizedModel& qm, std::ostream& os);
void save_quantized(const QuantizedModel& qm, const std::string& path);
QuantizedModel load_quantized(const std::string& path);

}  // namespace bmi::quant
