#pragma once

#include <vector>

#include "bmi/common.hpp"

namespace bmi::dsp {

// One raw trial straight off the amplifier: channel-major samples plus label.
struct RawTrial {
    int n_channels = 8;
    int n_samples = 2000;
    double fs_hz = 500.0;
    int label = 0;
    std::vector<float> samples;  // [n_channels][n_samples]

    float at(int ch, int t) const { return samples[static_cast<std::size_t>(ch) * n_samples + t]; }
    float& at(int ch, int t) { return samples[static_cast<std::size_t>(ch) * n_samples + t]; }
};

// Preprocessed model input: always 8 x 1900 in the standard configuration.
struct TrialTensor {
    int n_channels = 8;
    int n_samples = 1900;
    int label = 0;
    std::vector<float> samples;  // [n_channels][n_samples]

    float at(int ch, int t) const { return samples[static_cast<std::size_t>(ch) * n_samples + t]; }
    float& at(int ch, int t) { return samples[static_cast<std::size_t>(ch) * n_samples + t]; }
};

struct BiquadSection {
    // y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]
    double b0 = 1.0, b1 = 0.0, b2 = 0.0;
    double a1 = 0.0, a2 = 0.0;

    bool stable() const;  // poles strictly inside the unit circle
};

struct BiquadCascade {
    std::vector<BiquadSection> sections;

    bool stable() const;
    // complex magnitude of the cascade response at frequency f (Hz)
    double magnitude_at(double f_hz, double fs_hz) const;
};

// Butterworth bandpass: analog prototype of the given (even) order, lowpass->bandpass
// transform, bilinear discretization with edge pre-warping. order n yields n biquads.
BiquadCascade design_butterworth_bandpass(int order, double lo_hz, double hi_hz, double fs_hz);

// Second-order notch with zeros on the unit circle at f0 (RBJ cookbook form).
BiquadCascade design_notch(double f0_hz, double quality, double fs_hz);

// Causal single-pass filtering, per channel, Direct Form II transposed.
RawTrial apply_filter(const BiquadCascade& cascade, const RawTrial& x);

// Zero-phase variant (forward-backward) kept behind an explicit call for offline use.
RawTrial apply_filter_zero_phase(const BiquadCascade& cascade, const RawTrial& x);

// Number of samples in the detrend window: round(window_s * fs).
int detrend_window_samples(double window_s, double fs_hz);

// Subtracts a centered moving average (window round(window_s * fs) samples) from each
// channel; edge windows shrink. This removes slow drift rather than smoothing.
RawTrial moving_average_detrend(const RawTrial& x, double window_s);

// Keeps the central 1900 of 2000 samples (50 dropped from each end).
TrialTensor crop_trial(const RawTrial& x);

struct PreprocessConfig {
    int bandpass_order = 4;
    double bandpass_lo_hz = 0.5;
    double bandpass_hi_hz = 100.0;
    double notch_hz = 50.0;
    double notch_q = 30.0;
    double detrend_window_s = 0.25;
    bool zero_phase = false;
};

// bandpass -> notch -> moving-average detrend -> crop
TrialTensor preprocess(const RawTrial& x, const PreprocessConfig& cfg = {});

}  // namespace bmi::dsp
