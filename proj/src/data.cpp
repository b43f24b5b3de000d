#include "bmi/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "bmi/io_util.hpp"

namespace bmi::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

const char* kDefaultClassNames[4] = {"left", "right", "tongue", "rest"};

std::vector<float> read_trial_bin(const std::string& path, int channels, int samples) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw LoadError("missing trial file: " + path);
    const auto bytes = static_cast<std::size_t>(is.tellg());
    const std::size_t want = static_cast<std::size_t>(channels) * samples * 4;
    if (bytes != want)
        throw LoadError("wrong sample count in " + path + " (" + std::to_string(bytes) + " bytes, expected " +
                        std::to_string(want) + ")");
    is.seekg(0);
    std::vector<float> v(static_cast<std::size_t>(channels) * samples);
    for (auto& f : v) f = io::read_f32(is);
    if (!is) throw LoadError("short read in " + path);
    return v;
}

void write_trial_bin(const std::string& path, const std::vector<float>& v) {
    auto os = io::open_out(path);
    for (float f : v) io::write_f32(os, f);
    if (!os) throw LoadError("failed writing " + path);
}

std::string trial_file_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "trials/trial_%04d.bin", index + 1);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------

SessionManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw LoadError("missing manifest: " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw LoadError("bad manifest JSON in " + path + ": " + e.what());
    }
    SessionManifest m;
    try {
        m.schema_version = j.at("schema_version").get<int>();
        m.subject = j.at("subject").get<std::string>();
        m.session_index = j.at("session_index").get<int>();
        m.fs_hz = j.at("fs_hz").get<double>();
        m.classes = j.at("classes").get<std::vector<std::string>>();
        m.preprocessed = j.at("preprocessed").get<bool>();
        for (const auto& t : j.at("trials")) {
            TrialMeta tm;
            tm.file = t.at("file").get<std::string>();
            tm.label = t.at("label").get<int>();
            tm.run = t.value("run", 0);
            tm.mi = t.value("mi", false);
            tm.outlier = t.value("outlier", false);
            m.trials.push_back(std::move(tm));
        }
    } catch (const json::exception& e) {
        throw LoadError("manifest schema error in " + path + ": " + e.what());
    }
    if (m.schema_version != 1) throw LoadError("unsupported manifest schema in " + path);
    return m;
}

void save_manifest(const SessionManifest& m, const std::string& path) {
    json j;
    j["schema_version"] = m.schema_version;
    j["subject"] = m.subject;
    j["session_index"] = m.session_index;
    j["fs_hz"] = m.fs_hz;
    j["classes"] = m.classes;
    j["preprocessed"] = m.preprocessed;
    json trials = json::array();
    for (const auto& t : m.trials) {
        json tj;
        tj["file"] = t.file;
        tj["label"] = t.label;
        tj["run"] = t.run;
        tj["mi"] = t.mi;
        tj["outlier"] = t.outlier;
        trials.push_back(tj);
    }
    j["trials"] = trials;
    std::ofstream os(path);
    if (!os) throw LoadError("cannot write manifest: " + path);
    os << j.dump(2) << "\n";
}

// ---------------------------------------------------------------
// Load / save
// ---------------------------------------------------------------

SessionSequence load_sessions(const std::string& root, const dsp::PreprocessConfig& pp) {
    if (!fs::is_directory(root)) throw LoadError("dataset directory not found: " + root);

    std::vector<std::pair<int, fs::path>> session_dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (!e.is_directory()) continue;
        const std::string name = e.path().filename().string();
        if (name.rfind("session_", 0) != 0) continue;
        try {
            session_dirs.emplace_back(std::stoi(name.substr(8)), e.path());
        } catch (...) {
            throw LoadError("unparsable session directory name: " + name);
        }
    }
    if (session_dirs.empty()) throw LoadError("no session_<k> directories under " + root);
    std::sort(session_dirs.begin(), session_dirs.end());

    SessionSequence seq;
    for (const auto& [index, dir] : session_dirs) {
        const SessionManifest m = load_manifest((dir / "manifest.json").string());
        cl::Session session;
        session.reserve(m.trials.size());
        const int n_classes = static_cast<int>(m.classes.size());
        for (const auto& tm : m.trials) {
            if (tm.outlier) continue;
            const std::string path = (dir / tm.file).string();
            if (tm.label < 0 || tm.label >= n_classes)
                throw LoadError("label out of range for " + path);
            if (m.preprocessed) {
                dsp::TrialTensor t;
                t.n_channels = 8;
                t.n_samples = 1900;
                t.label = tm.label;
                t.samples = read_trial_bin(path, t.n_channels, t.n_samples);
                if (!all_finite(t.samples)) throw LoadError("non-finite samples in " + path);
                session.push_back(std::move(t));
            } else {
                dsp::RawTrial r;
                r.n_channels = 8;
                r.n_samples = 2000;
                r.fs_hz = m.fs_hz;
                r.label = tm.label;
                r.samples = read_trial_bin(path, r.n_channels, r.n_samples);
                if (!all_finite(r.samples)) throw LoadError("non-finite samples in " + path);
                session.push_back(dsp::preprocess(r, pp));
            }
        }
        seq.push_back(std::move(session));
    }
    return seq;
}

void save_sessions(const SessionSequence& seq, const std::string& root, const std::string& subject) {
    fs::create_directories(root);
    int max_label = 0;
    for (const auto& s : seq)
        for (const auto& t : s) max_label = std::max(max_label, t.label);

    for (std::size_t si = 0; si < seq.size(); ++si) {
        const fs::path dir = fs::path(root) / ("session_" + std::to_string(si + 1));
        fs::create_directories(dir / "trials");
        SessionManifest m;
        m.subject = subject;
        m.session_index = static_cast<int>(si + 1);
        m.preprocessed = true;
        for (int c = 0; c <= max_label; ++c)
            m.classes.push_back(c < 4 ? kDefaultClassNames[c] : "class_" + std::to_string(c));
        for (std::size_t ti = 0; ti < seq[si].size(); ++ti) {
            TrialMeta tm;
            tm.file = trial_file_name(static_cast<int>(ti));
            tm.label = seq[si][ti].label;
            m.trials.push_back(tm);
            write_trial_bin((dir / tm.file).string(), seq[si][ti].samples);
        }
        save_manifest(m, (dir / "manifest.json").string());
    }
}

// ---------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------

void SyntheticDriftConfig::validate() const {
    if (n_sessions < 1 || trials_per_session < 1) throw ConfigError("bad session/trial counts");
    if (n_classes < 2 || n_classes > 4) throw ConfigError("synthetic generator supports 2..4 classes");
    if (trials_per_session % n_classes != 0)
        throw ConfigError("trials_per_session must be divisible by n_classes for exact class balance");
    if (n_channels != 8 || raw_samples != 2000) throw ConfigError("generator emits the standard 8x2000 layout");
    if (!(noise_level >= 0.0) || !(amplitude > 0.0)) throw ConfigError("bad signal levels");
    if (!class_channel_weights.empty()) {
        if (static_cast<int>(class_channel_weights.size()) != n_classes) throw ConfigError("weights/class mismatch");
        for (const auto& w : class_channel_weights)
            if (static_cast<int>(w.size()) != n_channels) throw ConfigError("weight vector length mismatch");
    }
}

namespace {

// Session-drifted spatial signature. The cumulative drift angle walks a
// conveyor over channel planes: every 90 degrees the signal hops to the next
// plane (fresh channels, so stale detectors see pure noise there); the
// residual angle sets the in-plane orientation. Classes within a pair share
// the plane at orthogonal orientations, which is the only cue separating
// them, and cross-session signatures never collide with an opposite label.
//
//   label pair p (classes 2p, 2p+1), session drift angle theta:
//     plane  = (p + floor(theta / 90)) mod (channels/2)
//     orient = theta mod 90, class 2p at orient, class 2p+1 at orient + 90
std::vector<double> drifted_class_weights(const SyntheticDriftConfig& cfg, int label, double theta_deg) {
    if (!cfg.class_channel_weights.empty()) {
        // explicit weights: apply a plain in-plane rotation
        std::vector<double> w = cfg.class_channel_weights[label];
        const double th = theta_deg * kPi / 180.0;
        const double c = std::cos(th), s = std::sin(th);
        for (std::size_t k = 0; k + 1 < w.size(); k += 2) {
            const double a = w[k], b = w[k + 1];
            w[k] = c * a - s * b;
            w[k + 1] = s * a + c * b;
        }
        return w;
    }
    const int n_planes = cfg.n_channels / 2;
    const int pair = label / 2;
    double theta = std::fmod(theta_deg, 90.0 * n_planes);
    if (theta < 0) theta += 90.0 * n_planes;
    const int hop = static_cast<int>(theta / 90.0);
    const int plane = (pair + hop) % n_planes;
    double orient = (theta - 90.0 * hop) * kPi / 180.0;
    if (label % 2 != 0) orient += kPi / 2.0;

    std::vector<double> w(cfg.n_channels, 0.0);
    w[2 * plane] = std::cos(orient);
    w[2 * plane + 1] = std::sin(orient);
    return w;
}

std::vector<int> session_labels(const SyntheticDriftConfig& cfg, int session_index) {
    std::vector<int> labels;
    labels.reserve(cfg.trials_per_session);
    for (int i = 0; i < cfg.trials_per_session; ++i) labels.push_back(i % cfg.n_classes);
    Rng order = Rng(cfg.seed).split("session_order", static_cast<std::uint64_t>(session_index));
    order.shuffle(labels);
    return labels;
}

}  // namespace

dsp::RawTrial synthesize_raw_trial(const SyntheticDriftConfig& cfg, int session_index, int trial_index,
                                   int label) {
    const double theta = (session_index - 1) * cfg.rotation_per_session_deg;
    const double amp = cfg.amplitude * std::pow(cfg.amplitude_scale_per_session, session_index - 1);
    const std::vector<double> w = drifted_class_weights(cfg, label, theta);

    Rng rng = Rng(cfg.seed).split("trial", static_cast<std::uint64_t>(session_index) * 1000003ULL +
                                                static_cast<std::uint64_t>(trial_index));
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    const double jitter = rng.uniform(0.9, 1.1);

    dsp::RawTrial t;
    t.n_channels = cfg.n_channels;
    t.n_samples = cfg.raw_samples;
    t.fs_hz = cfg.fs_hz;
    t.label = label;
    t.samples.assign(static_cast<std::size_t>(cfg.n_channels) * cfg.raw_samples, 0.0f);

    const double omega = 2.0 * kPi * cfg.template_freq_hz / cfg.fs_hz;
    std::vector<double> tone(cfg.raw_samples);
    for (int i = 0; i < cfg.raw_samples; ++i) {
        const double env = std::sin(kPi * i / (cfg.raw_samples - 1.0));  // Hann burst
        tone[i] = amp * jitter * env * env * std::sin(omega * i + phase);
    }

    for (int ch = 0; ch < cfg.n_channels; ++ch) {
        // pink-like noise: leaky integrator plus a white component
        double p = 0.0;
        const double alpha = 0.95;
        const double beta = std::sqrt(1.0 - alpha * alpha);
        for (int i = 0; i < cfg.raw_samples; ++i) {
            p = alpha * p + beta * rng.normal();
            const double noise = cfg.noise_level * (0.7 * p + 0.3 * rng.normal());
            t.at(ch, i) = static_cast<float>(w[ch] * tone[i] + noise);
        }
    }
    return t;
}

SessionSequence generate_synthetic(const SyntheticDriftConfig& cfg, const dsp::PreprocessConfig& pp) {
    cfg.validate();
    SessionSequence seq;
    for (int s = 1; s <= cfg.n_sessions; ++s) {
        const std::vector<int> labels = session_labels(cfg, s);
        cl::Session session;
        session.reserve(labels.size());
        for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
            session.push_back(dsp::preprocess(synthesize_raw_trial(cfg, s, i, labels[i]), pp));
        }
        seq.push_back(std::move(session));
    }
    return seq;
}

void generate_raw_dataset(const SyntheticDriftConfig& cfg, const std::string& root) {
    cfg.validate();
    fs::create_directories(root);
    for (int s = 1; s <= cfg.n_sessions; ++s) {
        const fs::path dir = fs::path(root) / ("session_" + std::to_string(s));
        fs::create_directories(dir / "trials");
        SessionManifest m;
        m.subject = "synthetic";
        m.session_index = s;
        m.fs_hz = cfg.fs_hz;
        m.preprocessed = false;
        for (int c = 0; c < cfg.n_classes; ++c) m.classes.push_back(kDefaultClassNames[c]);

        const std::vector<int> labels = session_labels(cfg, s);
        for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
            TrialMeta tm;
            tm.file = trial_file_name(i);
            tm.label = labels[i];
            m.trials.push_back(tm);
            write_trial_bin((dir / tm.file).string(), synthesize_raw_trial(cfg, s, i, labels[i]).samples);
        }
        save_manifest(m, (dir / "manifest.json").string());
    }
}

SyntheticDriftConfig drift_benchmark_config(int n_classes, std::uint64_t seed) {
    SyntheticDriftConfig cfg;
    cfg.n_sessions = 4;
    cfg.trials_per_session = 40;
    cfg.n_classes = n_classes;
    cfg.rotation_per_session_deg = 30.0;
    cfg.noise_level = 0.5;
    cfg.seed = seed;
    return cfg;
}

}  // namespace bmi::data
