#pragma once
// Pipeline configuration: one JSON document whose defaults reproduce the
// study's settings (16 kHz, 2048/1024 STFT, 128 mels, 2.5 s segments, 30
// epochs at lr 1e-4, Mahalanobis scoring at the Gamma 0.9 quantile). Every
// field is checked against the owning module's preconditions at load time,
// and unknown keys are rejected at every nesting level so typos fail loudly
// instead of silently running with defaults.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "aad/anomaly.hpp"
#include "aad/augment.hpp"
#include "aad/common.hpp"
#include "aad/corpus.hpp"
#include "aad/dsp.hpp"
#include "aad/metrics.hpp"
#include "aad/net.hpp"

namespace aad::config {

struct PipelineConfig {
    std::filesystem::path dataset_root = "data";
    corpus::Machine machine = corpus::Machine::Fan;
    std::filesystem::path out_dir = "out";

    int sample_rate = 16000;
    int n_fft = dsp::kNFft;
    int hop = dsp::kHop;
    int n_mels = dsp::kNMels;
    dsp::FrequencyBand band = dsp::full_band(16000);
    bool segmenting = true;
    double segment_len_s = 2.5;
    double segment_overlap = 0.5;

    augment::AugmentConfig augment;
    bool use_specaugment = true;
    bool use_mixup = true;
    bool use_pseudo = true;

    // num_classes comes from the data at train time and input_mels is tied
    // to n_mels, so the config only exposes the two free model knobs.
    double width_mult = 1.0;
    double dropout_rate = 0.3;
    net::EmbeddingSource embedding_source = net::EmbeddingSource::softmax;

    int epochs = 30;
    double lr = 1e-4;
    int batch_size = 32;
    int checkpoint_every = 20;
    std::uint64_t seed = 0;

    anomaly::Metric metric = anomaly::Metric::mahalanobis;
    double q = 0.9;
    anomaly::Reducer reducer = anomaly::Reducer::mean;

    double pauc_p = 0.1;
    std::vector<double> q_grid = metrics::default_q_grid();

    corpus::SynthConfig synth;

    net::ModelConfig model_config(int num_classes) const {
        net::ModelConfig mc;
        mc.num_classes = num_classes;
        mc.width_mult = width_mult;
        mc.dropout_rate = dropout_rate;
        mc.input_mels = n_mels;
        return mc;
    }

    net::TrainConfig train_config(const std::filesystem::path& checkpoint_dir) const {
        net::TrainConfig tc;
        tc.epochs = epochs;
        tc.lr = lr;
        tc.batch_size = batch_size;
        tc.checkpoint_every = checkpoint_every;
        tc.checkpoint_dir = checkpoint_dir;
        tc.use_specaugment = use_specaugment;
        tc.use_mixup = use_mixup;
        tc.augment = augment;
        tc.seed = seed;
        return tc;
    }

    metrics::SweepRecipe sweep_recipe() const {
        metrics::SweepRecipe recipe;
        recipe.model = model_config(2);  // num_classes is re-derived per band
        recipe.train = train_config({});
        recipe.metric = metric;
        recipe.reducer = reducer;
        recipe.embedding_source = embedding_source;
        recipe.segmenting = segmenting;
        recipe.sample_rate = sample_rate;
        recipe.pauc_p = pauc_p;
        recipe.include_pseudo = use_pseudo;
        return recipe;
    }

    void validate() const {
        if (sample_rate <= 0) throw InvalidConfig("sample_rate must be positive");
        if (n_fft < 16 || (n_fft & (n_fft - 1)) != 0)
            throw InvalidConfig("stft.n_fft must be a power of two, at least 16");
        if (hop < 1 || hop > n_fft)
            throw InvalidConfig("stft.hop must lie in [1, n_fft]");
        if (n_mels > n_fft / 2 + 1)
            throw InvalidConfig("n_mels cannot exceed the spectrogram bin count");
        band.validate(sample_rate);
        if (!(segment_len_s > 0.0)) throw InvalidConfig("segment.len_s must be positive");
        if (!(segment_overlap >= 0.0 && segment_overlap < 1.0))
            throw InvalidConfig("segment.overlap must lie in [0, 1)");
        model_config(2).validate();  // covers width_mult, dropout_rate, n_mels >= 16
        train_config({}).validate();  // covers epochs, lr, batch_size, augment
        if (!(q > 0.0 && q < 1.0))
            throw QOutOfRange("anomaly.q must lie in (0, 1)");
        if (!(pauc_p > 0.0 && pauc_p <= 1.0))
            throw InvalidP("eval.pauc_p must lie in (0, 1]");
        if (q_grid.empty()) throw InvalidGrid("eval.q_grid must not be empty");
        for (double g : q_grid)
            if (!(g > 0.0 && g < 1.0))
                throw InvalidGrid("eval.q_grid values must lie in (0, 1)");
        synth.validate();
    }
};

namespace detail {

// Rejects keys outside the allowed set; the error names both the key and the
// JSON path so a typo points straight at the offending line.
inline void reject_unknown(const nlohmann::json& j, const std::string& where,
                           std::initializer_list<const char*> allowed) {
    if (!j.is_object())
        throw InvalidConfig("expected an object at " + where);
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw InvalidConfig("unknown key '" + item.key() + "' in " + where);
    }
}

inline void get_bool(const nlohmann::json& j, const std::string& where, const char* key,
                     bool& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_boolean()) throw InvalidConfig(where + "." + key + " must be a boolean");
    out = v.get<bool>();
}

inline void get_int(const nlohmann::json& j, const std::string& where, const char* key,
                    int& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_integer())
        throw InvalidConfig(where + "." + key + " must be an integer");
    out = v.get<int>();
}

inline void get_u64(const nlohmann::json& j, const std::string& where, const char* key,
                    std::uint64_t& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_integer() ||
        (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
        throw InvalidConfig(where + "." + key + " must be a non-negative integer");
    out = v.get<std::uint64_t>();
}

inline void get_double(const nlohmann::json& j, const std::string& where, const char* key,
                       double& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number()) throw InvalidConfig(where + "." + key + " must be a number");
    out = v.get<double>();
}

inline void get_string(const nlohmann::json& j, const std::string& where, const char* key,
                       std::string& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_string()) throw InvalidConfig(where + "." + key + " must be a string");
    out = v.get<std::string>();
}

inline void get_path(const nlohmann::json& j, const std::string& where, const char* key,
                     std::filesystem::path& out) {
    std::string s = out.string();
    get_string(j, where, key, s);
    out = s;
}

inline void get_double_vector(const nlohmann::json& j, const std::string& where,
                              const char* key, std::vector<double>& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array()) throw InvalidConfig(where + "." + key + " must be an array");
    std::vector<double> parsed;
    for (const auto& e : v) {
        if (!e.is_number())
            throw InvalidConfig(where + "." + key + " must hold numbers only");
        parsed.push_back(e.get<double>());
    }
    out = std::move(parsed);
}

}  // namespace detail

inline PipelineConfig config_from_json(const nlohmann::json& j) {
    using detail::get_bool;
    using detail::get_double;
    using detail::get_double_vector;
    using detail::get_int;
    using detail::get_path;
    using detail::get_string;
    using detail::get_u64;
    using detail::reject_unknown;

    PipelineConfig cfg;
    reject_unknown(j, "config",
                   {"dataset_root", "machine", "out_dir", "sample_rate", "stft", "n_mels",
                    "band", "segmenting", "segment", "augment", "model", "train", "anomaly",
                    "eval", "synth"});

    get_path(j, "config", "dataset_root", cfg.dataset_root);
    if (j.contains("machine")) {
        std::string name;
        get_string(j, "config", "machine", name);
        cfg.machine = corpus::machine_from_string(name);
    }
    get_path(j, "config", "out_dir", cfg.out_dir);
    get_int(j, "config", "sample_rate", cfg.sample_rate);
    get_int(j, "config", "n_mels", cfg.n_mels);
    get_bool(j, "config", "segmenting", cfg.segmenting);

    if (j.contains("stft")) {
        const auto& s = j.at("stft");
        reject_unknown(s, "stft", {"n_fft", "hop"});
        get_int(s, "stft", "n_fft", cfg.n_fft);
        get_int(s, "stft", "hop", cfg.hop);
    }

    // the default band tracks whatever sample rate the config selects
    cfg.band = dsp::full_band(cfg.sample_rate);
    if (j.contains("band")) {
        const auto& b = j.at("band");
        reject_unknown(b, "band", {"f_lo", "f_hi"});
        get_double(b, "band", "f_lo", cfg.band.f_lo);
        get_double(b, "band", "f_hi", cfg.band.f_hi);
    }

    if (j.contains("segment")) {
        const auto& s = j.at("segment");
        reject_unknown(s, "segment", {"len_s", "overlap"});
        get_double(s, "segment", "len_s", cfg.segment_len_s);
        get_double(s, "segment", "overlap", cfg.segment_overlap);
    }

    if (j.contains("augment")) {
        const auto& a = j.at("augment");
        reject_unknown(a, "augment",
                       {"pitch_semitones", "specaug_time_width", "specaug_freq_width",
                        "mixup_beta_alpha", "mixup_uniform_prob", "use_specaugment",
                        "use_mixup", "use_pseudo"});
        get_double_vector(a, "augment", "pitch_semitones", cfg.augment.pitch_semitones);
        get_int(a, "augment", "specaug_time_width", cfg.augment.specaug_time_width);
        get_int(a, "augment", "specaug_freq_width", cfg.augment.specaug_freq_width);
        get_double(a, "augment", "mixup_beta_alpha", cfg.augment.mixup_beta_alpha);
        get_double(a, "augment", "mixup_uniform_prob", cfg.augment.mixup_uniform_prob);
        get_bool(a, "augment", "use_specaugment", cfg.use_specaugment);
        get_bool(a, "augment", "use_mixup", cfg.use_mixup);
        get_bool(a, "augment", "use_pseudo", cfg.use_pseudo);
    }

    if (j.contains("model")) {
        const auto& m = j.at("model");
        reject_unknown(m, "model", {"width_mult", "dropout_rate", "embedding_source"});
        get_double(m, "model", "width_mult", cfg.width_mult);
        get_double(m, "model", "dropout_rate", cfg.dropout_rate);
        if (m.contains("embedding_source")) {
            std::string src;
            get_string(m, "model", "embedding_source", src);
            if (src == "softmax")
                cfg.embedding_source = net::EmbeddingSource::softmax;
            else if (src == "penultimate")
                cfg.embedding_source = net::EmbeddingSource::penultimate;
            else
                throw InvalidConfig("model.embedding_source must be 'softmax' or 'penultimate'");
        }
    }

    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown(t, "train", {"epochs", "lr", "batch_size", "checkpoint_every", "seed"});
        get_int(t, "train", "epochs", cfg.epochs);
        get_double(t, "train", "lr", cfg.lr);
        get_int(t, "train", "batch_size", cfg.batch_size);
        get_int(t, "train", "checkpoint_every", cfg.checkpoint_every);
        get_u64(t, "train", "seed", cfg.seed);
    }

    if (j.contains("anomaly")) {
        const auto& a = j.at("anomaly");
        reject_unknown(a, "anomaly", {"metric", "q", "reducer"});
        if (a.contains("metric")) {
            std::string m;
            get_string(a, "anomaly", "metric", m);
            cfg.metric = anomaly::metric_from_string(m);
        }
        get_double(a, "anomaly", "q", cfg.q);
        if (a.contains("reducer")) {
            std::string r;
            get_string(a, "anomaly", "reducer", r);
            cfg.reducer = anomaly::reducer_from_string(r);
        }
    }

    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        reject_unknown(e, "eval", {"pauc_p", "q_grid"});
        get_double(e, "eval", "pauc_p", cfg.pauc_p);
        get_double_vector(e, "eval", "q_grid", cfg.q_grid);
    }

    if (j.contains("synth")) {
        const auto& s = j.at("synth");
        reject_unknown(s, "synth",
                       {"sample_rate", "duration_s", "n_train", "n_test_normal",
                        "n_test_anomaly", "band_lo_hz", "band_hi_hz", "anomaly_tone_hz",
                        "anomaly_amp", "carrier_amp", "signature_amp", "rumble_amp",
                        "noise_min", "noise_max", "gain_jitter_db"});
        get_int(s, "synth", "sample_rate", cfg.synth.sample_rate);
        get_double(s, "synth", "duration_s", cfg.synth.duration_s);
        get_int(s, "synth", "n_train", cfg.synth.n_train);
        get_int(s, "synth", "n_test_normal", cfg.synth.n_test_normal);
        get_int(s, "synth", "n_test_anomaly", cfg.synth.n_test_anomaly);
        get_double(s, "synth", "band_lo_hz", cfg.synth.band_lo_hz);
        get_double(s, "synth", "band_hi_hz", cfg.synth.band_hi_hz);
        get_double(s, "synth", "anomaly_tone_hz", cfg.synth.anomaly_tone_hz);
        get_double(s, "synth", "anomaly_amp", cfg.synth.anomaly_amp);
        get_double(s, "synth", "carrier_amp", cfg.synth.carrier_amp);
        get_double(s, "synth", "signature_amp", cfg.synth.signature_amp);
        get_double(s, "synth", "rumble_amp", cfg.synth.rumble_amp);
        get_double(s, "synth", "noise_min", cfg.synth.noise_min);
        get_double(s, "synth", "noise_max", cfg.synth.noise_max);
        get_double(s, "synth", "gain_jitter_db", cfg.synth.gain_jitter_db);
    }

    cfg.validate();
    return cfg;
}

inline nlohmann::json config_to_json(const PipelineConfig& cfg) {
    nlohmann::json j;
    j["dataset_root"] = cfg.dataset_root.string();
    j["machine"] = corpus::to_string(cfg.machine);
    j["out_dir"] = cfg.out_dir.string();
    j["sample_rate"] = cfg.sample_rate;
    j["stft"] = {{"n_fft", cfg.n_fft}, {"hop", cfg.hop}};
    j["n_mels"] = cfg.n_mels;
    j["band"] = {{"f_lo", cfg.band.f_lo}, {"f_hi", cfg.band.f_hi}};
    j["segmenting"] = cfg.segmenting;
    j["segment"] = {{"len_s", cfg.segment_len_s}, {"overlap", cfg.segment_overlap}};
    j["augment"] = {{"pitch_semitones", cfg.augment.pitch_semitones},
                    {"specaug_time_width", cfg.augment.specaug_time_width},
                    {"specaug_freq_width", cfg.augment.specaug_freq_width},
                    {"mixup_beta_alpha", cfg.augment.mixup_beta_alpha},
                    {"mixup_uniform_prob", cfg.augment.mixup_uniform_prob},
                    {"use_specaugment", cfg.use_specaugment},
                    {"use_mixup", cfg.use_mixup},
                    {"use_pseudo", cfg.use_pseudo}};
    j["model"] = {{"width_mult", cfg.width_mult},
                  {"dropout_rate", cfg.dropout_rate},
                  {"embedding_source",
                   cfg.embedding_source == net::EmbeddingSource::softmax ? "softmax"
                                                                         : "penultimate"}};
    j["train"] = {{"epochs", cfg.epochs},
                  {"lr", cfg.lr},
                  {"batch_size", cfg.batch_size},
                  {"checkpoint_every", cfg.checkpoint_every},
                  {"seed", cfg.seed}};
    j["anomaly"] = {{"metric", anomaly::to_string(cfg.metric)},
                    {"q", cfg.q},
                    {"reducer", anomaly::to_string(cfg.reducer)}};
    j["eval"] = {{"pauc_p", cfg.pauc_p}, {"q_grid", cfg.q_grid}};
    j["synth"] = {{"sample_rate", cfg.synth.sample_rate},
                  {"duration_s", cfg.synth.duration_s},
                  {"n_train", cfg.synth.n_train},
                  {"n_test_normal", cfg.synth.n_test_normal},
                  {"n_test_anomaly", cfg.synth.n_test_anomaly},
                  {"band_lo_hz", cfg.synth.band_lo_hz},
                  {"band_hi_hz", cfg.synth.band_hi_hz},
                  {"anomaly_tone_hz", cfg.synth.anomaly_tone_hz},
                  {"anomaly_amp", cfg.synth.anomaly_amp},
                  {"carrier_amp", cfg.synth.carrier_amp},
                  {"signature_amp", cfg.synth.signature_amp},
                  {"rumble_amp", cfg.synth.rumble_amp},
                  {"noise_min", cfg.synth.noise_min},
                  {"noise_max", cfg.synth.noise_max},
                  {"gain_jitter_db", cfg.synth.gain_jitter_db}};
    return j;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot read config file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig("config file " + path.string() + " is not valid JSON: " +
                            e.what());
    }
    return config_from_json(j);
}

}  // namespace aad::config
