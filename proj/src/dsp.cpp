#include "bmi/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

namespace bmi::dsp {

namespace {

constexpr double kPi = 3.14159265358979323846;

using cplx = std::complex<double>;

// (1 - p z^-1)(1 - conj(p) z^-1) for a conjugate pole/zero pair
void pair_to_real_coeffs(const cplx& p, double& c1, double& c2) {
    c1 = -2.0 * p.real();
    c2 = std::norm(p);
}

}  // namespace

bool BiquadSection::stable() const {
    // roots of z^2 + a1 z + a2; stable iff |a2| < 1 and |a1| < 1 + a2
    return std::abs(a2) < 1.0 && std::abs(a1) < 1.0 + a2;
}

bool BiquadCascade::stable() const {
    return std::all_of(sections.begin(), sections.end(), [](const BiquadSection& s) { return s.stable(); });
}

double BiquadCascade::magnitude_at(double f_hz, double fs_hz) const {
    const double w = 2.0 * kPi * f_hz / fs_hz;
    const cplx z1 = std::polar(1.0, -w);
    const cplx z2 = z1 * z1;
    cplx h(1.0, 0.0);
    for (const auto& s : sections) {
        h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
    }
    return std::abs(h);
}

BiquadCascade design_butterworth_bandpass(int order, double lo_hz, double hi_hz, double fs_hz) {
    if (order <= 0 || order % 2 != 0) throw ParameterError("bandpass order must be a positive even number");
    if (!(0.0 < lo_hz && lo_hz < hi_hz && hi_hz < fs_hz / 2.0))
        throw ParameterError("bandpass edges must satisfy 0 < lo < hi < fs/2");

    const int n = order;  // analog prototype order; bandpass doubles it
    const double fs2 = 2.0 * fs_hz;

    // pre-warped band edges
    const double w_lo = fs2 * std::tan(kPi * lo_hz / fs_hz);
    const double w_hi = fs2 * std::tan(kPi * hi_hz / fs_hz);
    const double bw = w_hi - w_lo;
    const double w0_sq = w_lo * w_hi;

    // Butterworth prototype poles (left half-plane, unit cutoff)
    std::vector<cplx> proto;
    proto.reserve(static_cast<std::size_t>(n));
    for (int k = 1; k <= n; ++k) {
        const double theta = kPi * (2.0 * k + n - 1.0) / (2.0 * n);
        proto.emplace_back(std::cos(theta), std::sin(theta));
    }

    // lowpass -> bandpass: each prototype pole p yields the roots of
    // s^2 - p*bw*s + w0^2 = 0. Zeros: n at s=0, n at infinity.
    std::vector<cplx> poles;
    poles.reserve(static_cast<std::size_t>(2 * n));
    for (const cplx& p : proto) {
        const cplx half = p * (bw / 2.0);
        const cplx disc = std::sqrt(half * half - cplx(w0_sq, 0.0));
        poles.push_back(half + disc);
        poles.push_back(half - disc);
    }

    // bilinear transform; gain tracked analytically:
    //   H(z) = k * (z-1)^n (z+1)^n / prod(z - zd_i),  k = bw^n * fs2^n / prod(fs2 - pa_i)
    cplx denom(1.0, 0.0);
    std::vector<cplx> zpoles;
    zpoles.reserve(poles.size());
    for (const cplx& pa : poles) {
        denom *= (fs2 - pa);
        zpoles.push_back((fs2 + pa) / (fs2 - pa));
    }
    const double k_total = std::pow(bw * fs2, n) / denom.real();  // imaginary parts cancel

    // Group conjugate pole pairs into biquads. Poles were generated in +/- pairs per
    // prototype pole; re-pair explicitly by matching conjugates for robustness.
    std::vector<cplx> remaining = zpoles;
    std::vector<std::pair<cplx, cplx>> pairs;
    while (!remaining.empty()) {
        cplx p = remaining.back();
        remaining.pop_back();
        if (std::abs(p.imag()) < 1e-12) {
            // real pole: find the closest other real pole
            auto it = std::min_element(remaining.begin(), remaining.end(), [&](const cplx& a, const cplx& b) {
                return std::abs(a.imag()) + std::abs(a.real() - p.real()) <
                       std::abs(b.imag()) + std::abs(b.real() - p.real());
            });
            if (it == remaining.end()) throw StateError("unpaired real pole in bandpass design");
            pairs.emplace_back(p, *it);
            remaining.erase(it);
        } else {
            auto it = std::min_element(remaining.begin(), remaining.end(), [&](const cplx& a, const cplx& b) {
                return std::abs(a - std::conj(p)) < std::abs(b - std::conj(p));
            });
            if (it == remaining.end()) throw StateError("unpaired complex pole in bandpass design");
            pairs.emplace_back(p, *it);
            remaining.erase(it);
        }
    }

    // Each section takes one zero at z=+1 and one at z=-1 (numerator z^2 - 1) and an
    // equal share of the overall gain to keep per-section dynamic range sane.
    const double g_section = std::pow(std::abs(k_total), 1.0 / static_cast<double>(n));
    const double g_sign = k_total < 0.0 ? -1.0 : 1.0;

    BiquadCascade cascade;
    cascade.sections.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& [p1, p2] = pairs[i];
        BiquadSection s;
        double a1, a2;
        if (std::abs(p1.imag()) < 1e-12) {
            a1 = -(p1.real() + p2.real());
            a2 = p1.real() * p2.real();
        } else {
            pair_to_real_coeffs(p1, a1, a2);
        }
        s.a1 = a1;
        s.a2 = a2;
        const double g = (i == 0) ? g_sign * g_section : g_section;
        s.b0 = g;
        s.b1 = 0.0;
        s.b2 = -g;
        cascade.sections.push_back(s);
    }

    if (!cascade.stable()) throw StateError("designed bandpass cascade is unstable");
    return cascade;
}

BiquadCascade design_notch(double f0_hz, double quality, double fs_hz) {
    if (!(f0_hz > 0.0 && f0_hz < fs_hz / 2.0)) throw ParameterError("notch frequency must lie below Nyquist");
    if (!(quality > 0.0)) throw ParameterError("notch Q must be positive");

    const double w0 = 2.0 * kPi * f0_hz / fs_hz;
    const double alpha = std::sin(w0) / (2.0 * quality);
    const double cw = std::cos(w0);
    const double a0 = 1.0 + alpha;

    BiquadSection s;
    s.b0 = 1.0 / a0;
    s.b1 = -2.0 * cw / a0;
    s.b2 = 1.0 / a0;
    s.a1 = -2.0 * cw / a0;
    s.a2 = (1.0 - alpha) / a0;

    BiquadCascade cascade;
    cascade.sections.push_back(s);
    return cascade;
}

RawTrial apply_filter(const BiquadCascade& cascade, const RawTrial& x) {
    if (!cascade.stable()) throw ParameterError("refusing to run an unstable cascade");
    if (!all_finite(x.samples)) throw DataError("filter input contains non-finite samples");

    RawTrial y = x;
    const int n = x.n_samples;
    for (int ch = 0; ch < x.n_channels; ++ch) {
        float* data = &y.samples[static_cast<std::size_t>(ch) * n];
        for (const auto& s : cascade.sections) {
            double z1 = 0.0, z2 = 0.0;  // DF2T state
            for (int t = 0; t < n; ++t) {
                const double in = data[t];
                const double out = s.b0 * in + z1;
                z1 = s.b1 * in - s.a1 * out + z2;
                z2 = s.b2 * in - s.a2 * out;
                data[t] = static_cast<float>(out);
            }
        }
    }
    return y;
}

RawTrial apply_filter_zero_phase(const BiquadCascade& cascade, const RawTrial& x) {
    RawTrial fwd = apply_filter(cascade, x);
    // reverse, filter, reverse back
    const int n = fwd.n_samples;
    for (int ch = 0; ch < fwd.n_channels; ++ch) {
        float* d = &fwd.samples[static_cast<std::size_t>(ch) * n];
        std::reverse(d, d + n);
    }
    RawTrial bwd = apply_filter(cascade, fwd);
    for (int ch = 0; ch < bwd.n_channels; ++ch) {
        float* d = &bwd.samples[static_cast<std::size_t>(ch) * n];
        std::reverse(d, d + n);
    }
    return bwd;
}

int detrend_window_samples(double window_s, double fs_hz) {
    return static_cast<int>(std::lround(window_s * fs_hz));
}

RawTrial moving_average_detrend(const RawTrial& x, double window_s) {
    const int w = detrend_window_samples(window_s, x.fs_hz);
    if (w < 1) throw ParameterError("detrend window shorter than one sample");
    if (w > x.n_samples) throw ParameterError("detrend window longer than the trial");

    const int half_l = (w - 1) / 2;
    const int half_r = w / 2;
    const int n = x.n_samples;

    RawTrial y = x;
    std::vector<double> prefix(static_cast<std::size_t>(n) + 1);
    for (int ch = 0; ch < x.n_channels; ++ch) {
        const float* in = &x.samples[static_cast<std::size_t>(ch) * n];
        float* out = &y.samples[static_cast<std::size_t>(ch) * n];
        prefix[0] = 0.0;
        for (int t = 0; t < n; ++t) prefix[t + 1] = prefix[t] + in[t];
        for (int t = 0; t < n; ++t) {
            const int lo = std::max(0, t - half_l);
            const int hi = std::min(n - 1, t + half_r);
            const double avg = (prefix[hi + 1] - prefix[lo]) / (hi - lo + 1);
            out[t] = static_cast<float>(in[t] - avg);
        }
    }
    return y;
}

TrialTensor crop_trial(const RawTrial& x) {
    constexpr int kKeep = 1900;
    if (x.n_samples != 2000) throw DataError("crop expects 2000-sample trials");
    const int drop = (x.n_samples - kKeep) / 2;

    TrialTensor t;
    t.n_channels = x.n_channels;
    t.n_samples = kKeep;
    t.label = x.label;
    t.samples.resize(static_cast<std::size_t>(x.n_channels) * kKeep);
    for (int ch = 0; ch < x.n_channels; ++ch) {
        const float* in = &x.samples[static_cast<std::size_t>(ch) * x.n_samples + drop];
        std::copy(in, in + kKeep, &t.samples[static_cast<std::size_t>(ch) * kKeep]);
    }
    return t;
}

TrialTensor preprocess(const RawTrial& x, const PreprocessConfig& cfg) {
    const auto bandpass = design_butterworth_bandpass(cfg.bandpass_order, cfg.bandpass_lo_hz, cfg.bandpass_hi_hz, x.fs_hz);
    const auto notch = design_notch(cfg.notch_hz, cfg.notch_q, x.fs_hz);

    RawTrial y = cfg.zero_phase ? apply_filter_zero_phase(bandpass, x) : apply_filter(bandpass, x);
    y = cfg.zero_phase ? apply_filter_zero_phase(notch, y) : apply_filter(notch, y);
    y = moving_average_detrend(y, cfg.detrend_window_s);
    return crop_trial(y);
}

}  // namespace bmi::dsp
