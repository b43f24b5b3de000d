#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bmi/cl.hpp"
#include "bmi/dsp.hpp"

namespace bmi::data {

using cl::SessionSequence;

// ---------------------------------------------------------------
// On-disk dataset layout:
//   <root>/session_<k>/manifest.json
//   <root>/session_<k>/trials/trial_0001.bin ...
// Trial files are raw little-endian float32, channel-major. Raw sessions hold
// 8x2000 samples and are preprocessed at load time; preprocessed sessions hold
// 8x1900 tensors and are loaded verbatim (the manifest flag guards against
// preprocessing twice).
// ---------------------------------------------------------------

struct TrialMeta {
    std::string file;
    int label = 0;
    int run = 0;
    bool mi = false;
    bool outlier = false;
};

struct SessionManifest {
    int schema_version = 1;
    std::string subject = "unknown";
    int session_index = 1;
    double fs_hz = 500.0;
    std::vector<std::string> classes;
    bool preprocessed = false;
    std::vector<TrialMeta> trials;
};

SessionManifest load_manifest(const std::string& path);
void save_manifest(const SessionManifest& m, const std::string& path);

// Loads every session under root in index order. Raw trials run through
// dsp::preprocess; outlier-flagged trials are skipped. Errors name the trial.
SessionSequence load_sessions(const std::string& root, const dsp::PreprocessConfig& pp = {});

// Writes a preprocessed dataset (8x1900 tensors, manifest flag set); loading it
// back is a bitwise round trip.
void save_sessions(const SessionSequence& seq, const std::string& root, const std::string& subject = "saved");

// ---------------------------------------------------------------
// Synthetic multi-session generator.
//
// Each class is an oscillatory template mixed across channels by a class
// weight vector; sessions rotate the mixing planes and rescale amplitude,
// which produces controllable inter-session covariate shift. Deterministic
// for a given seed.
// ---------------------------------------------------------------

struct SyntheticDriftConfig {
    int n_sessions = 4;
    int trials_per_session = 40;  // must be divisible by n_classes
    int n_classes = 2;
    int n_channels = 8;
    int raw_samples = 2000;
    double fs_hz = 500.0;
    double template_freq_hz = 12.0;  // on a detrend-comb null; shared by classes so
                                     // class identity is purely spatial
    double amplitude = 1.0;
    double rotation_per_session_deg = 40.0;  // cumulative channel-plane rotation
    double amplitude_scale_per_session = 1.0;
    double noise_level = 0.3;
    std::uint64_t seed = 1;
    std::vector<std::vector<double>> class_channel_weights;  // optional override, [class][channel]

    void validate() const;
};

// Generates and preprocesses all sessions in memory.
SessionSequence generate_synthetic(const SyntheticDriftConfig& cfg,
                                   const dsp::PreprocessConfig& pp = {});

// Same trials, written as a raw on-disk dataset (loading reproduces
// generate_synthetic bit for bit).
void generate_raw_dataset(const SyntheticDriftConfig& cfg, const std::string& root);

// One raw trial, exposed for tests
dsp::RawTrial synthesize_raw_trial(const SyntheticDriftConfig& cfg, int session_index, int trial_index,
                                   int label);

// The calibrated 4-session drift scenario used by the synthetic benchmark
// experiments (strong monotone covariate shift, high per-session SNR).
SyntheticDriftConfig drift_benchmark_config(int n_classes = 2, std::uint64_t seed = 1);

}  // namespace bmi::data
