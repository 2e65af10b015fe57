#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "aad/audio.hpp"
#include "aad/common.hpp"

namespace aad::corpus {

enum class Machine { Bearing, Fan, Gearbox, Slider, ToyCar, ToyTrain, Valve };
enum class Domain { source, target };
enum class Split { train, test };
enum class Label { normal, anomaly, unknown };

inline const char* to_string(Machine m) {
    switch (m) {
        case Machine::Bearing: return "bearing";
        case Machine::Fan: return "fan";
        case Machine::Gearbox: return "gearbox";
        case Machine::Slider: return "slider";
        case Machine::ToyCar: return "ToyCar";
        case Machine::ToyTrain: return "ToyTrain";
        case Machine::Valve: return "valve";
    }
    return "?";
}
inline const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }
inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }
inline const char* to_string(Label l) {
    switch (l) {
        case Label::normal: return "normal";
        case Label::anomaly: return "anomaly";
        case Label::unknown: return "unknown";
    }
    return "?";
}

inline Machine machine_from_string(const std::string& s) {
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (lower == "bearing") return Machine::Bearing;
    if (lower == "fan") return Machine::Fan;
    if (lower == "gearbox") return Machine::Gearbox;
    if (lower == "slider") return Machine::Slider;
    if (lower == "toycar") return Machine::ToyCar;
    if (lower == "toytrain") return Machine::ToyTrain;
    if (lower == "valve") return Machine::Valve;
    throw InvalidConfig("unknown machine '" + s + "'");
}

struct ClipMeta {
    Machine machine = Machine::Fan;
    int section = 0;
    Domain domain = Domain::source;
    Split split = Split::train;
    Label label = Label::unknown;
    std::filesystem::path path;
};

struct Manifest {
    std::filesystem::path root;
    std::vector<ClipMeta> entries;

    std::vector<ClipMeta> select(Split split) const {
        std::vector<ClipMeta> out;
        for (const auto& e : entries)
            if (e.split == split) out.push_back(e);
        return out;
    }
};

namespace detail {

inline std::vector<std::string> split_tokens(const std::string& s, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    while (start <= s.size()) {
        const size_t end = s.find(sep, start);
        if (end == std::string::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, end - start));
        start = end + 1;
    }
    return out;
}

inline bool all_digits(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(),
                                     [](unsigned char c) { return std::isdigit(c); });
}

}  // namespace detail

/// Parses DCASE-style filename tokens:
///   section_<NN>_<domain>_<split>_<label>_<index>[_extra...].wav
/// The label token may be absent for unlabeled test clips. Trailing attribute
/// tokens are tolerated.
inline ClipMeta parse_clip_filename(const std::string& filename, Machine machine) {
    std::string stem = filename;
    if (const size_t dot = stem.rfind('.'); dot != std::string::npos) stem = stem.substr(0, dot);
    const auto tok = detail::split_tokens(stem, '_');
    if (tok.size() < 4 || tok[0] != "section" || !detail::all_digits(tok[1]))
        throw AmbiguousFilename(filename);

    ClipMeta meta;
    meta.machine = machine;
    meta.section = std::stoi(tok[1]);
    if (meta.section < 0 || meta.section > 2)
        throw AmbiguousFilename(filename + " (section out of range)");

    if (tok[2] == "source")
        meta.domain = Domain::source;
    else if (tok[2] == "target")
        meta.domain = Domain::target;
    else
        throw AmbiguousFilename(filename + " (domain token)");

    if (tok[3] == "train")
        meta.split = Split::train;
    else if (tok[3] == "test")
        meta.split = Split::test;
    else
        throw AmbiguousFilename(filename + " (split token)");

    if (tok.size() >= 5 && (tok[4] == "normal" || tok[4] == "anomaly"))
        meta.label = tok[4] == "normal" ? Label::normal : Label::anomaly;
    else if (tok.size() >= 5 && detail::all_digits(tok[4]))
        meta.label = Label::unknown;
    else
        throw AmbiguousFilename(filename + " (label/index token)");

    if (meta.split == Split::train && meta.label != Label::normal)
        throw AmbiguousFilename(filename + " (train clips must be normal)");
    return meta;
}

/// Scans <root>/<machine>/{train,test} for DCASE-style WAV files. Entries come
/// back sorted by path; skipped files are reported through `warnings`.
inline Manifest scan_dataset(const std::filesystem::path& root, Machine machine,
                             std::vector<std::string>* warnings = nullptr) {
    namespace fs = std::filesystem;
    Manifest manifest;
    manifest.root = root;

    const fs::path machine_dir = root / to_string(machine);
    for (const char* split_dir : {"train", "test"}) {
        const fs::path dir = machine_dir / split_dir;
        if (!fs::is_directory(dir)) continue;
        for (const auto& it : fs::directory_iterator(dir)) {
            if (!it.is_regular_file()) continue;
            const fs::path p = it.path();
            if (p.extension() != ".wav") {
                if (warnings)
                    warnings->push_back("skipped non-wav file: " + p.string());
                continue;
            }
            try {
                ClipMeta meta = parse_clip_filename(p.filename().string(), machine);
                meta.path = p;
                manifest.entries.push_back(std::move(meta));
            } catch (const AmbiguousFilename& e) {
                if (warnings) warnings->push_back(std::string("unparsable: ") + e.what());
            }
        }
    }
    std::sort(manifest.entries.begin(), manifest.entries.end(),
              [](const ClipMeta& a, const ClipMeta& b) { return a.path < b.path; });

    std::set<std::string> seen;
    for (const auto& e : manifest.entries)
        if (!seen.insert(e.path.string()).second)
            throw AmbiguousFilename("duplicate path " + e.path.string());

    if (manifest.entries.empty())
        throw EmptyDataset("no clips found under " + machine_dir.string());
    return manifest;
}

/// Scans a pseudo-audio subtree (<root>/<machine>/pseudo) written by the
/// pitch-shift synthesis command. Returns an empty list when absent.
inline std::vector<ClipMeta> scan_pseudo_dir(const std::filesystem::path& root,
                                             Machine machine) {
    namespace fs = std::filesystem;
    std::vector<ClipMeta> out;
    const fs::path dir = root / to_string(machine) / "pseudo";
    if (!fs::is_directory(dir)) return out;
    for (const auto& it : fs::directory_iterator(dir)) {
        if (!it.is_regular_file() || it.path().extension() != ".wav") continue;
        ClipMeta meta = parse_clip_filename(it.path().filename().string(), machine);
        meta.path = it.path();
        out.push_back(std::move(meta));
    }
    std::sort(out.begin(), out.end(),
              [](const ClipMeta& a, const ClipMeta& b) { return a.path < b.path; });
    return out;
}

inline nlohmann::json manifest_to_json(const Manifest& manifest) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : manifest.entries) {
        entries.push_back({{"machine", to_string(e.machine)},
                           {"section", e.section},
                           {"domain", to_string(e.domain)},
                           {"split", to_string(e.split)},
                           {"label", to_string(e.label)},
                           {"path", e.path.string()}});
    }
    return nlohmann::json{{"root", manifest.root.string()}, {"entries", entries}};
}

inline void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + path.string());
    out << manifest_to_json(manifest).dump(2) << "\n";
}

inline Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw MalformedWav(std::string("manifest parse: ") + e.what());
    }
    Manifest m;
    m.root = j.at("root").get<std::string>();
    for (const auto& e : j.at("entries")) {
        ClipMeta meta;
        meta.machine = machine_from_string(e.at("machine").get<std::string>());
        meta.section = e.at("section").get<int>();
        const std::string dom = e.at("domain").get<std::string>();
        meta.domain = dom == "source" ? Domain::source : Domain::target;
        meta.split = e.at("split").get<std::string>() == "train" ? Split::train : Split::test;
        const std::string lab = e.at("label").get<std::string>();
        meta.label = lab == "normal" ? Label::normal
                     : lab == "anomaly" ? Label::anomaly
                                        : Label::unknown;
        meta.path = e.at("path").get<std::string>();
        m.entries.push_back(std::move(meta));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
//
// Desk-scale stand-in for the real dataset. Each section has its own carrier
// tone stack plus a weak in-band signature tone; every clip gets per-clip
// nuisance variation (carrier gain, rumble, noise level). Anomalous clips
// additionally carry a tone confined to the anomaly band, with enough margin
// that their band-limited energy always exceeds that of same-section normals.
// ---------------------------------------------------------------------------

struct SynthConfig {
    int sample_rate = 16000;
    double duration_s = 10.0;
    int n_train = 200;        // train normals, spread over sections round-robin
    int n_test_normal = 20;
    int n_test_anomaly = 20;
    double band_lo_hz = 2000.0;   // anomaly band
    double band_hi_hz = 5000.0;
    double anomaly_tone_hz = 3500.0;
    double anomaly_amp = 0.12;
    double carrier_amp = 0.1;     // three per-section carriers below the band
    double signature_amp = 0.05;  // weak in-band section signature
    double rumble_amp = 0.1;
    double noise_min = 0.01;      // white-noise sigma range per clip
    double noise_max = 0.05;
    double gain_jitter_db = 4.0;  // per-clip carrier gain jitter

    void validate() const {
        if (sample_rate <= 0 || duration_s <= 0) throw InvalidConfig("bad rate/duration");
        const double nyquist = sample_rate / 2.0;
        if (!(band_lo_hz >= 0 && band_lo_hz < band_hi_hz))
            throw InvalidConfig("anomaly band must satisfy 0 <= lo < hi");
        if (band_hi_hz > nyquist)
            throw InvalidConfig("anomaly band exceeds Nyquist (" + std::to_string(nyquist) + " Hz)");
        if (anomaly_tone_hz <= band_lo_hz || anomaly_tone_hz >= band_hi_hz)
            throw InvalidConfig("anomaly tone must lie inside the anomaly band");
        if (n_train < 3 || n_test_normal < 1 || n_test_anomaly < 1)
            throw InvalidConfig("corpus counts too small");
        if (noise_min < 0 || noise_max < noise_min) throw InvalidConfig("bad noise range");
    }
};

namespace detail {

inline void add_tone(std::vector<float>& x, double freq, double amp, double phase,
                     int sample_rate) {
    const double w = 2.0 * M_PI * freq / sample_rate;
    for (size_t i = 0; i < x.size(); ++i)
        x[i] += static_cast<float>(amp * std::sin(w * static_cast<double>(i) + phase));
}

inline AudioClip synth_clip(const SynthConfig& cfg, int section, bool anomalous, Rng rng) {
    AudioClip clip;
    clip.sample_rate = cfg.sample_rate;
    clip.samples.assign(static_cast<size_t>(std::llround(cfg.duration_s * cfg.sample_rate)),
                        0.0f);

    const double jitter = std::pow(10.0, rng.uniform(-cfg.gain_jitter_db, cfg.gain_jitter_db) / 20.0);
    const std::array<double, 3> carriers = {300.0 + 100.0 * section, 700.0 + 150.0 * section,
                                            1200.0 + 200.0 * section};
    for (const double f : carriers)
        add_tone(clip.samples, f, cfg.carrier_amp * jitter, rng.uniform(0, 2 * M_PI),
                 cfg.sample_rate);

    // weak in-band signature so the band-cropped classifier can still
    // tell the sections apart
    const double sig_hz = cfg.band_lo_hz + 400.0 + 300.0 * section;
    add_tone(clip.samples, sig_hz, cfg.signature_amp, rng.uniform(0, 2 * M_PI),
             cfg.sample_rate);

    add_tone(clip.samples, rng.uniform(80.0, 180.0), cfg.rumble_amp,
             rng.uniform(0, 2 * M_PI), cfg.sample_rate);

    const double sigma = rng.uniform(cfg.noise_min, cfg.noise_max);
    for (auto& s : clip.samples) s += static_cast<float>(rng.normal(0.0, sigma));

    if (anomalous)
        add_tone(clip.samples, cfg.anomaly_tone_hz,
                 cfg.anomaly_amp * std::pow(10.0, rng.uniform(-2.0, 2.0) / 20.0),
                 rng.uniform(0, 2 * M_PI), cfg.sample_rate);

    for (auto& s : clip.samples) s = std::clamp(s, -1.0f, 1.0f);
    return clip;
}

}  // namespace detail

/// Writes a synthetic DCASE-shaped corpus under <root>/<machine>/{train,test}
/// and returns the manifest of what was written. Deterministic given the seed.
inline Manifest generate_synthetic_corpus(const std::filesystem::path& root, Machine machine,
                                          const SynthConfig& cfg, uint64_t seed) {
    namespace fs = std::filesystem;
    cfg.validate();
    const Rng base(seed ^ 0x5eedf00dULL);

    const fs::path machine_dir = root / to_string(machine);
    fs::create_directories(machine_dir / "train");
    fs::create_directories(machine_dir / "test");

    char name[128];
    auto write_one = [&](Split split, int index, int section, bool anomalous) {
        const AudioClip clip =
            detail::synth_clip(cfg, section, anomalous,
                               base.derive((static_cast<uint64_t>(split == Split::test) << 32) ^
                                           (static_cast<uint64_t>(anomalous) << 40) ^
                                           static_cast<uint64_t>(index)));
        std::snprintf(name, sizeof name, "section_%02d_source_%s_%s_%04d_synth.wav", section,
                      split == Split::train ? "train" : "test",
                      anomalous ? "anomaly" : "normal", index);
        write_wav_pcm16(machine_dir / (split == Split::train ? "train" : "test") / name, clip);
    };

    for (int i = 0; i < cfg.n_train; ++i) write_one(Split::train, i, i % 3, false);
    for (int i = 0; i < cfg.n_test_normal; ++i) write_one(Split::test, i, i % 3, false);
    for (int i = 0; i < cfg.n_test_anomaly; ++i) write_one(Split::test, i, i % 3, true);

    return scan_dataset(root, machine);
}

}  // namespace aad::corpus
