#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bmi/common.hpp"
#include "bmi/dsp.hpp"

namespace bmi::nn {

using dsp::TrialTensor;

// ---------------------------------------------------------------
// Configuration and parameters
// ---------------------------------------------------------------

// Fixed-topology compact CNN: temporal conv -> BN -> depthwise spatial conv
// -> BN -> ReLU -> avgpool -> separable conv -> BN -> ReLU -> avgpool -> dense.
// The default configuration maps 8x1900 inputs to a 32x29 pre-head feature map
// (flattened length 928) with 7,716 parameters.
struct ModelConfig {
    int n_channels = 8;
    int n_samples = 1900;
    int n_classes = 4;
    int temporal_filters = 16;       // F1
    int temporal_kernel = 128;       // same padding
    int spatial_depth_multiplier = 2;  // D; spatial maps M = F1 * D
    int separable_kernel = 16;       // depthwise stage of the separable conv
    int pool1 = 8;
    int pool2 = 8;
    float dropout_rate = 0.5f;
    float bn_momentum = 0.1f;
    float bn_eps = 1e-5f;

    int spatial_maps() const { return temporal_filters * spatial_depth_multiplier; }
    int pooled1() const { return n_samples / pool1; }  // floor division
    int pooled2() const { return pooled1() / pool2; }
    int feature_len() const { return spatial_maps() * pooled2(); }
    std::size_t param_count() const;
    void validate() const;  // throws ConfigError on inconsistent values
};

struct BatchNormParams {
    std::vector<float> gamma, beta;
    std::vector<float> running_mean, running_var;
};

// Adaptation-depth groups, ordered from the head backwards. Depth d trains
// groups 1..d; depth 6 additionally unfreezes every batch-norm affine.
enum class ParamGroup : int {
    DenseHead = 1,
    SepPointwise = 2,
    SepDepthwise = 3,
    SpatialConv = 4,
    TemporalConv = 5,
    BatchNorms = 6,
};

struct Model {
    ModelConfig cfg;
    std::vector<float> w_temporal;   // [F1][K1]
    BatchNormParams bn1;             // per temporal filter
    std::vector<float> w_spatial;    // [M][n_channels]
    BatchNormParams bn2;             // per spatial map
    std::vector<float> w_sep_depth;  // [M][K2]
    std::vector<float> w_sep_point;  // [M][M]
    BatchNormParams bn3;             // per spatial map
    std::vector<float> w_dense;      // [n_classes][feature_len]
    std::vector<float> b_dense;      // [n_classes]
};

// Gradient buffers, same shapes as the trainable parameters.
struct ModelGrads {
    std::vector<float> w_temporal, bn1_gamma, bn1_beta;
    std::vector<float> w_spatial, bn2_gamma, bn2_beta;
    std::vector<float> w_sep_depth, w_sep_point, bn3_gamma, bn3_beta;
    std::vector<float> w_dense, b_dense;

    void resize_like(const Model& m);
    void zero();
};

// Flat view over the trainable parameter arrays, in declaration order.
struct ParamRef {
    float* data;
    std::size_t size;
    ParamGroup group;
    const char* name;
};
std::vector<ParamRef> param_refs(Model& m);
std::vector<ParamRef> grad_refs(ModelGrads& g, const Model& m);

// true if the group is trainable at the given adaptation depth (1..6)
bool group_trainable(ParamGroup g, int depth);

Model init_model(const ModelConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------

struct Batch {
    std::vector<const TrialTensor*> trials;
    std::vector<int> labels;
    int size() const { return static_cast<int>(trials.size()); }
};

// Fake-quantization hook points; implemented by the quant module. A null
// context leaves the float path untouched.
enum class WeightId : int { Temporal = 0, Spatial, SepDepth, SepPoint, Dense, kCount };
enum class ActId : int { Input = 0, PostBn1, PostRelu1, PostPool1, PostSepDepth, PostRelu2, PostPool2, kCount };

class QatContext {
public:
    virtual ~QatContext() = default;
    virtual bool enabled() const = 0;
    // quantize-dequantize weights; result valid until the next call for the same id
    virtual const std::vector<float>& fq_weights(WeightId id, const std::vector<float>& w) = 0;
    // quantize-dequantize an activation tensor in place (pre-values cached for backward)
    virtual void fq_activation(ActId id, std::vector<float>& x) = 0;
    // straight-through backward: mask dx and accumulate threshold gradients
    virtual void bw_weights(WeightId id, const std::vector<float>& w, std::vector<float>& dw) = 0;
    virtual void bw_activation(ActId id, std::vector<float>& dx) = 0;
    // whether the input quantizer threshold needs a gradient (forces conv1 input backward)
    virtual bool wants_input_grad() const = 0;
    // called once per optimizer step so learned thresholds can update
    virtual void on_step(float /*lr*/) {}
};

// Everything backward needs; reused across batches to avoid reallocation.
struct ForwardCache {
    int batch = 0;
    bool train_mode = false;
    bool valid = false;
    std::vector<float> x;        // effective conv1 input   [B][C][T]
    std::vector<float> xhat1;    // bn1 normalized          [B][F1][C][T]
    std::vector<float> y1;       // effective conv2 input   [B][F1][C][T]
    std::vector<float> mu1, var1;  // batch stats (train-mode forward)
    std::vector<float> xhat2, y2;  // [B][M][T]
    std::vector<float> mu2, var2;
    std::vector<float> r2;       // post-relu1              [B][M][T]
    std::vector<float> p1;       // post-pool1 (+fq)        [B][M][T1]
    std::vector<float> drop1;    // mask (0 or 1/keep)      [B][M][T1]
    std::vector<float> d1;       // effective conv3 input   [B][M][T1]
    std::vector<float> a3;       // conv3 out (+fq)         [B][M][T1]
    std::vector<float> xhat3, y3;  // [B][M][T1]
    std::vector<float> mu3, var3;
    std::vector<float> r3;       // post-relu2              [B][M][T1]
    std::vector<float> p2;       // post-pool2 (+fq) = features [B][M][T2]
    std::vector<float> drop2;    // mask                    [B][M][T2]
    std::vector<float> feat;     // dense input             [B][F]
    std::vector<float> logits;   // [B][n_classes]
};

struct ForwardResult {
    std::vector<float> logits;    // [B][n_classes]
    std::vector<float> features;  // [B][M][T2], the pre-head feature map
};

// rng drives dropout and is required in train mode.
ForwardResult forward(const Model& m, const Batch& b, bool train_mode, ForwardCache& cache,
                      Rng* rng = nullptr, QatContext* qat = nullptr);

// convenience wrapper for inference on a single trial
std::vector<float> infer_logits(const Model& m, const TrialTensor& t, QatContext* qat = nullptr);

// Mean cross-entropy over the batch plus its gradient w.r.t. the logits.
double cross_entropy(const std::vector<float>& logits, const std::vector<int>& labels, int n_classes,
                     std::vector<float>* dlogits = nullptr);

// softmax over each row; numerically stabilized
void softmax_rows(const std::vector<float>& logits, int n_classes, std::vector<float>& probs);

// Exact gradients for every parameter; depth masks groups outside 1..depth.
ModelGrads backward(const Model& m, const ForwardCache& cache, const std::vector<float>& dlogits,
                    int depth = 6, QatContext* qat = nullptr);

// ---------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------

struct AdamState {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    long step = 0;
    std::vector<float> m, v;  // flat, aligned with param_refs order

    static AdamState make(const Model& model, float lr = 1e-3f);
};

void adam_step(AdamState& state, Model& model, ModelGrads& grads, int depth = 6);

// ---------------------------------------------------------------
// Training / evaluation
// ---------------------------------------------------------------

using TrialList = std::vector<const TrialTensor*>;

// Pluggable loss. logits_loss fills dlogits (batch-mean convention) and may use
// the batch contents (distillation needs the inputs); param_penalty adds
// parameter-space gradient terms (weight anchoring) directly.
class LossHooks {
public:
    virtual ~LossHooks() = default;
    virtual double logits_loss(const std::vector<float>& logits, const std::vector<int>& labels,
                               int n_classes, std::vector<float>& dlogits, const Batch& batch) = 0;
    virtual double param_penalty(const Model& /*m*/, ModelGrads& /*g*/) { return 0.0; }
};

struct TrainOptions {
    int epochs = 50;
    int batch_size = 10;
    float lr = 1e-3f;
    int depth = 6;
    LossHooks* loss = nullptr;   // null: plain cross-entropy
    QatContext* qat = nullptr;
    AdamState* adam = nullptr;   // null: fresh optimizer state per call
    bool abort_on_nan = true;
};

// Seeded mini-batch training; labels may be overridden (label-permutation tests).
// Returns the mean loss per epoch.
std::vector<double> train(Model& m, const TrialList& data, const std::vector<int>& labels,
                          const TrainOptions& opts, Rng rng);
std::vector<double> train(Model& m, const TrialList& data, const TrainOptions& opts, Rng rng);

struct ConfusionMatrix {
    int n_classes = 0;
    std::vector<long> counts;  // [true][pred]

    long& at(int truth, int pred) { return counts[static_cast<std::size_t>(truth) * n_classes + pred]; }
    long at(int truth, int pred) const { return counts[static_cast<std::size_t>(truth) * n_classes + pred]; }
    long total() const;
    long correct() const;
    double accuracy_pct() const;
};

struct EvalResult {
    std::vector<int> predictions;
    ConfusionMatrix confusion;
    double accuracy_pct = 0.0;
};

EvalResult evaluate(const Model& m, const TrialList& data, QatContext* qat = nullptr);
EvalResult evaluate(const Model& m, const TrialList& data, const std::vector<int>& labels,
                    QatContext* qat = nullptr);

struct CvResult {
    double mean_pct = 0.0;
    double std_pct = 0.0;
    std::vector<double> fold_pct;
    std::vector<int> fold_of;  // validation fold of each trial
    bool stratified = true;
};

// Stratified 5-fold cross-validation; falls back to unstratified splitting
// (with stratified=false) when a class cannot reach every fold.
CvResult five_fold_cv(const TrialList& data, const std::vector<int>& labels, const ModelConfig& cfg,
                      int epochs, Rng rng, int batch_size = 4, int folds = 5, bool parallel = true);

// ---------------------------------------------------------------
// Checkpoints (little-endian, versioned)
// ---------------------------------------------------------------

void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

}  // namespace bmi::nn
