#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bmi/common.hpp"
#include "bmi/nn.hpp"

namespace bmi::cl {

using dsp::TrialTensor;
using nn::TrialList;

// Sessions in chronological order; each session's trials in acquisition order.
using Session = std::vector<TrialTensor>;
using SessionSequence = std::vector<Session>;

struct SplitSpec {
    double train_fraction = 0.6;
    bool chronological = true;  // earlier trials train, later trials test
};

struct SessionSplit {
    TrialList train, test;
};

// Chronological split: first floor(train_fraction * n) trials train, rest test.
SessionSplit split_session(const Session& session, const SplitSpec& spec = {});

// ---------------------------------------------------------------
// Replay buffer (reservoir sampling)
// ---------------------------------------------------------------

template <typename T>
class ReplayBuffer {
public:
    ReplayBuffer(std::size_t capacity, Rng rng) : capacity_(capacity), rng_(rng) {}

    // Vitter's algorithm R: the first k offers fill the buffer, offer n replaces
    // a uniformly random slot with probability k/n.
    void offer(const T& item) {
        ++seen_;
        if (items_.size() < capacity_) {
            items_.push_back(item);
        } else if (capacity_ > 0) {
            const std::uint64_t j = rng_.below(seen_);
            if (j < capacity_) items_[static_cast<std::size_t>(j)] = item;
        }
    }

    const std::vector<T>& items() const { return items_; }
    std::uint64_t seen() const { return seen_; }
    std::size_t capacity() const { return capacity_; }

private:
    std::size_t capacity_;
    std::vector<T> items_;
    std::uint64_t seen_ = 0;
    Rng rng_;
};

// ---------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------

enum class StrategyKind { NaiveTL, ER, LwF, EWC, Joint };

std::string to_string(StrategyKind k);
StrategyKind strategy_from_string(const std::string& s);  // throws ConfigError

struct StrategyConfig {
    StrategyKind kind = StrategyKind::NaiveTL;
    std::size_t er_capacity = 20;
    double lwf_lambda_o = 1.0;
    double lwf_temperature = 2.0;
    bool lwf_kl_form = false;  // subtract the teacher entropy (same gradients)
    double ewc_lambda = 10000.0;
    bool ewc_online = false;   // single accumulated Fisher instead of one per phase
    int epochs = 50;           // fine-tuning epochs per phase
    int pretrain_epochs = 40;
    int batch_size = 10;
    float lr = 1e-3f;
    int depth = 6;             // adaptation depth for fine-tuning phases

    void validate() const;
};

// Distillation-regularized loss:
//   CE(new, labels) + lambda_o * mean_b D(softmax(old/T) || softmax(new/T))
// D is the soft cross-entropy by default (kl_form subtracts the constant teacher
// entropy); there is no T^2 gradient rescale. dlogits, when given, receives the
// batch-mean gradient of the total loss w.r.t. the new logits.
double lwf_loss(const std::vector<float>& new_logits, const std::vector<float>& old_logits,
                const std::vector<int>& labels, int n_classes, double lambda_o = 1.0, double temperature = 2.0,
                bool kl_form = false, std::vector<float>* dlogits = nullptr);

// Diagonal empirical Fisher information with the anchor parameters, both flat
// in param_refs order.
struct FisherDiag {
    std::vector<float> fisher;
    std::vector<float> anchor;
};

// Mean over trials of the squared gradient of the log-likelihood of the model's
// own prediction (eval-mode forward).
FisherDiag fisher_diag(const nn::Model& m, const TrialList& data);

// Quadratic anchoring penalty: (lambda/2) * sum_i F_i (theta_i - anchor_i)^2.
// Adds the gradient to `grads` when given and returns the penalty value.
double ewc_penalty(const nn::Model& m, const FisherDiag& fd, double lambda, nn::ModelGrads* grads);

// CE + EWC penalty over the logits, packaged for the training loop.
double ewc_loss(const std::vector<float>& logits, const std::vector<int>& labels, int n_classes,
                const nn::Model& m, const FisherDiag& fd, double lambda, std::vector<float>* dlogits);

// ---------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------

struct BinaryMetrics {
    std::optional<double> precision_pct, recall_pct, specificity_pct;
};

// Precision/recall/specificity for a 2-class confusion with the given positive
// class; zero-denominator metrics are absent rather than zero.
BinaryMetrics binary_metrics(const nn::ConfusionMatrix& cm, int positive_class);

struct PhaseMetrics {
    int ns = 1;  // newest session (1-based)
    std::vector<nn::ConfusionMatrix> per_session;  // test confusions, sessions 1..ns
    std::vector<double> acc_per_session;
    double acc_avg = 0.0;   // Acc(1:ns): arithmetic mean of per-session accuracies
    double acc_new = 0.0;   // Acc(ns)
    std::optional<double> pre_avg, rec_avg, spe_avg;
    std::optional<double> pre_new, rec_new, spe_new;
};

// Fills the derived metric fields from the stored confusions (2-class metrics
// only when the confusions are 2x2).
PhaseMetrics metrics(std::vector<nn::ConfusionMatrix> confusions, int ns, int positive_class = 0);

struct WorkflowReport {
    std::string task;      // "tl_workflow" | "cl_workflow"
    std::string strategy;
    std::uint64_t seed = 0;
    int n_sessions = 0;
    int positive_class = 0;
    std::vector<PhaseMetrics> phases;  // phase 1 = after pretraining
};

// ---------------------------------------------------------------
// Workflows
// ---------------------------------------------------------------

struct WorkflowConfig {
    nn::ModelConfig model;
    StrategyConfig strategy;
    SplitSpec split;
    int positive_class = 0;
    std::uint64_t seed = 1;
};

struct WorkflowResult {
    WorkflowReport report;
    nn::Model final_model;
};

// Pretraining phase: fresh model, plain cross-entropy on the session-1 train split.
nn::Model pretrain(const TrialList& session1_train, const nn::ModelConfig& cfg, const StrategyConfig& sc,
                   Rng rng);

// Chain fine-tuning across sessions; evaluates on the test splits of sessions
// 1..ns after every phase. run_tl_workflow is the NaiveTL special case.
WorkflowResult run_cl_workflow(const SessionSequence& seq, const WorkflowConfig& cfg);
WorkflowResult run_tl_workflow(const SessionSequence& seq, WorkflowConfig cfg);

// Newest-session accuracy for each adaptation depth, repeated per seed.
struct DepthSweepResult {
    std::vector<int> depths;
    // [depth][phase ns-2] -> per-seed newest-session accuracies
    std::vector<std::vector<std::vector<double>>> acc_new;
    std::vector<std::vector<double>> mean, stddev;  // over seeds
};

DepthSweepResult adaptation_depth_sweep(const SessionSequence& seq, const std::vector<int>& depths,
                                        WorkflowConfig cfg, const std::vector<std::uint64_t>& seeds);

}  // namespace bmi::cl
