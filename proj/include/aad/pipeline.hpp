#pragma once
// Pipeline commands behind the CLI: ingest -> pseudo synthesis -> train ->
// embed -> fit -> score -> evaluate -> sweeps. Every command is deterministic
// given (config, seed) and rewrites its artifacts byte-identically on rerun.
//
// Artifact map under out_dir: manifest.json, checkpoints/checkpoint_epoch_NNN
// .aadm, training_log.csv, embeddings_{train,test}.csv, reference.json,
// scores.csv, report.{csv,md,plot.csv}, {band,threshold}_sweep.{csv,md,
// plot.csv}. Mel features live in a content-addressed cache (out_dir/cache or
// $AAD_CACHE_DIR), keyed by FNV-1a over the WAV bytes and the DSP settings,
// so reruns and sweeps skip recomputation. Derived artifacts carry a ".key"
// sidecar with the hash of their inputs; a matching sidecar means the file is
// current. A mkdir-based lock serializes writers of one cache.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "aad/anomaly.hpp"
#include "aad/augment.hpp"
#include "aad/common.hpp"
#include "aad/config.hpp"
#include "aad/corpus.hpp"
#include "aad/dsp.hpp"
#include "aad/metrics.hpp"
#include "aad/net.hpp"

namespace aad::pipeline {

using config::PipelineConfig;

// ---------------------------------------------------------------------------
// Content hashing and artifact freshness
// ---------------------------------------------------------------------------

namespace detail {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = kFnvOffset) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::uint64_t hash_file(const std::filesystem::path& path,
                               std::uint64_t h = kFnvOffset) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot read " + path.string() + " for hashing");
    char buf[65536];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    return h;
}

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace detail

// An artifact is current when its ".key" sidecar holds the hash of the exact
// inputs it was built from.
inline bool artifact_fresh(const std::filesystem::path& path, const std::string& key) {
    if (!std::filesystem::exists(path)) return false;
    std::ifstream in(path.string() + ".key");
    std::string stored;
    return in && std::getline(in, stored) && stored == key;
}

inline void stamp_artifact(const std::filesystem::path& path, const std::string& key) {
    std::ofstream out(path.string() + ".key", std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + path.string() + ".key");
    out << key << '\n';
}

// ---------------------------------------------------------------------------
// Cache location and lock
// ---------------------------------------------------------------------------

inline std::filesystem::path cache_dir(const PipelineConfig& cfg) {
    if (const char* env = std::getenv("AAD_CACHE_DIR"); env && *env)
        return std::filesystem::path(env);
    return cfg.out_dir / "cache";
}

// Serializes writers of one artifact cache across processes: holding the lock
// means having created <cache>/.lock, which is removed on release. Waiters
// poll; a lock older than the timeout is presumed abandoned and an error asks
// the user to remove it.
class CacheLock {
  public:
    explicit CacheLock(const std::filesystem::path& cache, int timeout_ms = 10000)
        : lock_dir_(cache / ".lock") {
        namespace fs = std::filesystem;
        fs::create_directories(cache);
        const int step_ms = 50;
        for (int waited = 0;; waited += step_ms) {
            std::error_code ec;
            if (fs::create_directory(lock_dir_, ec) && !ec) return;
            if (waited >= timeout_ms)
                throw IoFailure("artifact cache " + cache.string() +
                                " is locked by another process (remove " +
                                lock_dir_.string() + " if that process is gone)");
            std::this_thread::sleep_for(std::chrono::milliseconds(step_ms));
        }
    }
    ~CacheLock() {
        std::error_code ec;
        std::filesystem::remove(lock_dir_, ec);
    }
    CacheLock(const CacheLock&) = delete;
    CacheLock& operator=(const CacheLock&) = delete;

  private:
    std::filesystem::path lock_dir_;
};

// ---------------------------------------------------------------------------
// Feature cache: per-clip mel spectrograms under the config's DSP settings
// ---------------------------------------------------------------------------

struct FeatureStats {
    std::size_t computed = 0;
    std::size_t cached = 0;
};

namespace detail {

inline std::string dsp_signature(const PipelineConfig& cfg) {
    std::ostringstream sig;
    sig << "sr=" << cfg.sample_rate << ";n_fft=" << cfg.n_fft << ";hop=" << cfg.hop
        << ";n_mels=" << cfg.n_mels << ";band=" << metrics::detail::fmt_double(cfg.band.f_lo)
        << '-' << metrics::detail::fmt_double(cfg.band.f_hi)
        << ";seg=" << (cfg.segmenting ? 1 : 0)
        << ";len=" << metrics::detail::fmt_double(cfg.segment_len_s)
        << ";ov=" << metrics::detail::fmt_double(cfg.segment_overlap);
    return sig.str();
}

inline std::string feature_key(const std::filesystem::path& wav,
                               const PipelineConfig& cfg) {
    return hex64(hash_file(wav, fnv1a64(dsp_signature(cfg))));
}

inline std::vector<dsp::MelSpectrogram> compute_features(
    const std::filesystem::path& wav, const PipelineConfig& cfg) {
    corpus::AudioClip clip = corpus::read_wav(wav);
    if (clip.sample_rate != cfg.sample_rate)
        clip = corpus::resample_linear(clip, cfg.sample_rate);
    const dsp::MelFilterbank fb =
        dsp::build_mel_filterbank(cfg.sample_rate, cfg.n_mels, cfg.n_fft);
    std::vector<dsp::MelSpectrogram> mels;
    if (cfg.segmenting) {
        for (const auto& seg :
             dsp::segment_clip(clip, cfg.segment_len_s, cfg.segment_overlap))
            mels.push_back(dsp::mel_spectrogram(
                dsp::band_crop(dsp::stft(dsp::segment_to_clip(seg), cfg.n_fft, cfg.hop),
                               cfg.band),
                fb));
    } else {
        mels.push_back(dsp::mel_spectrogram(
            dsp::band_crop(dsp::stft(clip, cfg.n_fft, cfg.hop), cfg.band), fb));
    }
    return mels;
}

}  // namespace detail

// Loads a clip's mel features from the cache, computing and storing them on a
// miss. A "<key>.count" marker written after the segment files makes partial
// writes invisible. Caller holds the cache lock.
inline std::vector<dsp::MelSpectrogram> clip_features(const std::filesystem::path& wav,
                                                      const PipelineConfig& cfg,
                                                      const std::filesystem::path& cache,
                                                      FeatureStats* stats = nullptr) {
    namespace fs = std::filesystem;
    const fs::path dir = cache / "features";
    const std::string key = detail::feature_key(wav, cfg);
    const fs::path count_file = dir / (key + ".count");

    auto seg_path = [&](int i) {
        char name[64];
        std::snprintf(name, sizeof name, "%s_%03d.mel", key.c_str(), i);
        return dir / name;
    };

    if (fs::exists(count_file)) {
        std::ifstream in(count_file);
        int count = 0;
        if (in >> count && count > 0) {
            std::vector<dsp::MelSpectrogram> mels;
            bool complete = true;
            for (int i = 0; i < count; ++i) {
                if (!fs::exists(seg_path(i))) {
                    complete = false;
                    break;
                }
                mels.push_back(dsp::load_mel(seg_path(i)));
            }
            if (complete) {
                if (stats) ++stats->cached;
                return mels;
            }
        }
    }

    std::vector<dsp::MelSpectrogram> mels = detail::compute_features(wav, cfg);
    fs::create_directories(dir);
    for (std::size_t i = 0; i < mels.size(); ++i)
        dsp::save_mel(seg_path(static_cast<int>(i)), mels[i], cfg.sample_rate);
    std::ofstream out(count_file, std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + count_file.string());
    out << mels.size() << '\n';
    if (stats) ++stats->computed;
    return mels;
}

// ---------------------------------------------------------------------------
// Shared steps (assume the cache lock is held where they touch the cache)
// ---------------------------------------------------------------------------

namespace detail {

inline corpus::Manifest scan_with_hint(const PipelineConfig& cfg,
                                       std::vector<std::string>* warnings) {
    try {
        return corpus::scan_dataset(cfg.dataset_root, cfg.machine, warnings);
    } catch (const EmptyDataset& e) {
        throw EmptyDataset("no usable clips for machine '" +
                           std::string(corpus::to_string(cfg.machine)) + "' under " +
                           cfg.dataset_root.string() +
                           "; generate one with synth-corpus or point dataset_root at a "
                           "dataset (" +
                           e.what() + ")");
    }
}

struct TrainingSet {
    std::vector<dsp::MelSpectrogram> specs;
    std::vector<int> labels;
    int n_classes = 0;
};

// Section ids in sorted order become classes 0..K-1; pseudo clips form one
// extra class K regardless of their parsed section.
inline TrainingSet assemble_training_set(const std::vector<corpus::ClipMeta>& train_entries,
                                         const std::vector<corpus::ClipMeta>& pseudo_entries,
                                         const PipelineConfig& cfg,
                                         const std::filesystem::path& cache,
                                         FeatureStats* stats) {
    if (train_entries.empty()) throw EmptyDataset("no train clips to build features from");
    std::vector<int> sections;
    for (const auto& e : train_entries) sections.push_back(e.section);
    std::sort(sections.begin(), sections.end());
    sections.erase(std::unique(sections.begin(), sections.end()), sections.end());
    auto class_of = [&sections](int section) {
        return static_cast<int>(std::lower_bound(sections.begin(), sections.end(), section) -
                                sections.begin());
    };

    TrainingSet set;
    set.n_classes = static_cast<int>(sections.size()) + (pseudo_entries.empty() ? 0 : 1);
    for (const auto& e : train_entries)
        for (auto& mel : clip_features(e.path, cfg, cache, stats)) {
            set.specs.push_back(std::move(mel));
            set.labels.push_back(class_of(e.section));
        }
    for (const auto& e : pseudo_entries)
        for (auto& mel : clip_features(e.path, cfg, cache, stats)) {
            set.specs.push_back(std::move(mel));
            set.labels.push_back(static_cast<int>(sections.size()));
        }
    return set;
}

inline std::vector<std::filesystem::path> list_checkpoints(const PipelineConfig& cfg) {
    namespace fs = std::filesystem;
    std::vector<fs::path> out;
    const fs::path dir = cfg.out_dir / "checkpoints";
    if (!fs::is_directory(dir)) return out;
    for (const auto& it : fs::directory_iterator(dir)) {
        const std::string name = it.path().filename().string();
        if (it.is_regular_file() && name.rfind("checkpoint_epoch_", 0) == 0 &&
            it.path().extension() == ".aadm")
            out.push_back(it.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Runs the model over each clip's cached features and returns one embedding
// row per segment, in entry order.
inline std::vector<anomaly::EmbeddingRow> embed_entries(
    net::Model<float>& model, const std::vector<corpus::ClipMeta>& entries,
    const PipelineConfig& cfg, const std::filesystem::path& cache, FeatureStats* stats) {
    std::vector<anomaly::EmbeddingRow> rows;
    for (const auto& entry : entries) {
        const std::vector<dsp::MelSpectrogram> mels =
            clip_features(entry.path, cfg, cache, stats);
        std::vector<std::size_t> idx(mels.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        const net::Tensor<float> x = net::detail::pack_specs<float>(mels, idx);
        const net::Tensor<float> probs = model.forward(x, false, nullptr);
        const net::Tensor<float>& hidden = model.hidden();
        const bool softmax = cfg.embedding_source == net::EmbeddingSource::softmax;
        const net::Tensor<float>& src = softmax ? probs : hidden;
        for (std::size_t s = 0; s < mels.size(); ++s) {
            anomaly::EmbeddingRow row;
            row.clip_path = entry.path.string();
            row.segment_index = static_cast<int>(s);
            row.values.resize(static_cast<std::size_t>(src.dim(1)));
            for (int c = 0; c < src.dim(1); ++c)
                row.values[static_cast<std::size_t>(c)] =
                    static_cast<double>(src.at2(static_cast<int>(s), c));
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline std::filesystem::path cmd_ingest(const PipelineConfig& cfg,
                                        std::vector<std::string>* warnings = nullptr) {
    const corpus::Manifest manifest = detail::scan_with_hint(cfg, warnings);
    std::filesystem::create_directories(cfg.out_dir);
    const std::filesystem::path out = cfg.out_dir / "manifest.json";
    corpus::save_manifest(manifest, out);
    return out;
}

inline std::filesystem::path cmd_synth_corpus(const PipelineConfig& cfg) {
    const corpus::Manifest manifest = corpus::generate_synthetic_corpus(
        cfg.dataset_root, cfg.machine, cfg.synth, cfg.seed);
    std::filesystem::create_directories(cfg.out_dir);
    const std::filesystem::path out = cfg.out_dir / "manifest.json";
    corpus::save_manifest(manifest, out);
    return out;
}

struct SynthPseudoResult {
    std::vector<std::filesystem::path> written;
    std::size_t skipped = 0;
};

// Pitch-shifted copies of every train clip land in <machine>/pseudo/, named
// <stem>_ps<shift>.wav. A JSON index maps each pseudo file to the content
// hash of its source, so reruns skip files whose source has not changed.
inline SynthPseudoResult cmd_synth_pseudo(const PipelineConfig& cfg,
                                          std::vector<std::string>* warnings = nullptr) {
    namespace fs = std::filesystem;
    SynthPseudoResult result;
    const std::vector<double>& shifts = cfg.augment.pitch_semitones;
    if (shifts.empty()) {
        if (warnings)
            warnings->push_back("no pitch shifts configured; pseudo synthesis is a no-op");
        return result;
    }

    const corpus::Manifest manifest = detail::scan_with_hint(cfg, warnings);
    const std::vector<corpus::ClipMeta> train = manifest.select(corpus::Split::train);
    if (train.empty())
        throw EmptyDataset("pseudo synthesis needs a train split under " +
                           cfg.dataset_root.string());

    const fs::path pseudo_dir =
        cfg.dataset_root / corpus::to_string(cfg.machine) / "pseudo";
    fs::create_directories(pseudo_dir);
    const fs::path index_path = pseudo_dir / "index.json";

    nlohmann::json index = nlohmann::json::object();
    if (fs::exists(index_path)) {
        std::ifstream in(index_path);
        try {
            in >> index;
            if (!index.is_object()) index = nlohmann::json::object();
        } catch (const nlohmann::json::exception&) {
            if (warnings)
                warnings->push_back("pseudo index " + index_path.string() +
                                    " is unreadable; regenerating all pseudo clips");
            index = nlohmann::json::object();
        }
    }

    for (const auto& entry : train) {
        const std::string src_hash = detail::hex64(detail::hash_file(entry.path));
        for (double shift : shifts) {
            char suffix[32];
            std::snprintf(suffix, sizeof suffix, "_ps%+g", shift);
            const std::string name = entry.path.stem().string() + suffix + ".wav";
            const fs::path target = pseudo_dir / name;
            const auto it = index.find(name);
            if (it != index.end() && it->is_object() &&
                it->value("source_hash", std::string{}) == src_hash &&
                it->value("semitones", 1e9) == shift && fs::exists(target)) {
                ++result.skipped;
                continue;
            }
            corpus::write_wav_pcm16(target,
                                    augment::pitch_shift(corpus::read_wav(entry.path), shift));
            index[name] = {{"source_hash", src_hash},
                           {"semitones", shift},
                           {"source", entry.path.filename().string()}};
            result.written.push_back(target);
        }
    }

    std::ofstream out(index_path, std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + index_path.string());
    out << index.dump(2) << '\n';
    return result;
}

// Warms the feature cache for every clip the pipeline will touch.
inline FeatureStats cmd_features(const PipelineConfig& cfg,
                                 std::vector<std::string>* warnings = nullptr) {
    const corpus::Manifest manifest = detail::scan_with_hint(cfg, warnings);
    const std::filesystem::path cache = cache_dir(cfg);
    CacheLock lock(cache);
    FeatureStats stats;
    for (const auto& entry : manifest.entries) clip_features(entry.path, cfg, cache, &stats);
    if (cfg.use_pseudo)
        for (const auto& entry : corpus::scan_pseudo_dir(cfg.dataset_root, cfg.machine))
            clip_features(entry.path, cfg, cache, &stats);
    return stats;
}

struct TrainArtifacts {
    std::vector<std::filesystem::path> checkpoints;
    std::filesystem::path log_csv;
};

namespace detail {

inline TrainArtifacts train_locked(const PipelineConfig& cfg,
                                   const std::filesystem::path& cache,
                                   std::vector<std::string>* warnings) {
    namespace fs = std::filesystem;
    const corpus::Manifest manifest = scan_with_hint(cfg, warnings);
    const std::vector<corpus::ClipMeta> train = manifest.select(corpus::Split::train);
    if (train.empty())
        throw EmptyDataset("no train clips under " + cfg.dataset_root.string() +
                           "; run synth-corpus or ingest a dataset first");
    const std::vector<corpus::ClipMeta> pseudo =
        cfg.use_pseudo ? corpus::scan_pseudo_dir(cfg.dataset_root, cfg.machine)
                       : std::vector<corpus::ClipMeta>{};

    FeatureStats stats;
    TrainingSet set = assemble_training_set(train, pseudo, cfg, cache, &stats);

    const fs::path ckpt_dir = cfg.out_dir / "checkpoints";
    fs::create_directories(ckpt_dir);
    // stale checkpoints from a longer previous run must not leak into pooling
    for (const auto& old : list_checkpoints(cfg)) fs::remove(old);

    net::Model<float> model =
        net::build_model<float>(cfg.model_config(std::max(2, set.n_classes)), cfg.seed);
    net::Adam<float> adam(cfg.lr);
    const net::TrainingLog log =
        net::train(model, adam, set.specs, set.labels, cfg.train_config(ckpt_dir));

    TrainArtifacts out;
    out.checkpoints = log.checkpoints;
    out.log_csv = cfg.out_dir / "training_log.csv";
    log.save_csv(out.log_csv);
    return out;
}

inline std::vector<std::filesystem::path> ensure_checkpoints_locked(
    const PipelineConfig& cfg, const std::filesystem::path& cache,
    std::vector<std::string>* warnings) {
    std::vector<std::filesystem::path> ckpts = list_checkpoints(cfg);
    if (!ckpts.empty()) return ckpts;
    if (warnings) warnings->push_back("no checkpoints found; training first");
    return train_locked(cfg, cache, warnings).checkpoints;
}

// Train-split embeddings pool every saved checkpoint (the trick of fitting
// the reference on embeddings from several training stages); the test split
// uses the final checkpoint only.
inline std::filesystem::path embed_locked(const PipelineConfig& cfg, corpus::Split split,
                                          const std::filesystem::path& cache,
                                          std::vector<std::string>* warnings) {
    const corpus::Manifest manifest = scan_with_hint(cfg, warnings);
    const std::vector<corpus::ClipMeta> entries = manifest.select(split);
    if (entries.empty())
        throw EmptyDataset("no " + std::string(corpus::to_string(split)) +
                           " clips under " + cfg.dataset_root.string());

    const std::vector<std::filesystem::path> all_ckpts =
        ensure_checkpoints_locked(cfg, cache, warnings);
    const std::vector<std::filesystem::path> ckpts =
        split == corpus::Split::train
            ? all_ckpts
            : std::vector<std::filesystem::path>{all_ckpts.back()};

    std::uint64_t h = fnv1a64("embed|" + dsp_signature(cfg) + "|src=" +
                              (cfg.embedding_source == net::EmbeddingSource::softmax
                                   ? std::string("softmax")
                                   : std::string("penultimate")) +
                              "|split=" + corpus::to_string(split));
    for (const auto& c : ckpts) h = hash_file(c, h);
    for (const auto& e : entries) {
        h = fnv1a64(e.path.string(), h);  // renames must invalidate too
        h = hash_file(e.path, h);
    }
    const std::string key = hex64(h);

    const std::filesystem::path out =
        cfg.out_dir /
        ("embeddings_" + std::string(corpus::to_string(split)) + ".csv");
    if (artifact_fresh(out, key)) return out;

    std::vector<anomaly::EmbeddingRow> rows;
    FeatureStats stats;
    for (const auto& ckpt : ckpts) {
        net::Model<float> model = net::load_checkpoint(ckpt);
        std::vector<anomaly::EmbeddingRow> part =
            embed_entries(model, entries, cfg, cache, &stats);
        rows.insert(rows.end(), std::make_move_iterator(part.begin()),
                    std::make_move_iterator(part.end()));
    }
    anomaly::save_embeddings_csv(out, rows);
    stamp_artifact(out, key);
    return out;
}

inline std::filesystem::path fit_locked(const PipelineConfig& cfg,
                                        const std::filesystem::path& cache,
                                        std::vector<std::string>* warnings) {
    const std::filesystem::path emb_path =
        embed_locked(cfg, corpus::Split::train, cache, warnings);
    const std::string key = hex64(
        hash_file(emb_path, fnv1a64("fit|" + anomaly::to_string(cfg.metric) + "|")));
    const std::filesystem::path out = cfg.out_dir / "reference.json";
    if (artifact_fresh(out, key)) return out;

    const std::vector<anomaly::EmbeddingRow> rows = anomaly::load_embeddings_csv(emb_path);
    std::vector<std::vector<double>> inputs;
    inputs.reserve(rows.size());
    for (const auto& r : rows) inputs.push_back(r.values);
    const anomaly::ReferenceModel ref = anomaly::fit_reference(inputs, cfg.metric, warnings);
    anomaly::save_reference(out, ref);
    stamp_artifact(out, key);
    return out;
}

struct ClipScore {
    corpus::ClipMeta meta;
    anomaly::AnomalyScore result;
};

// Scores every test clip against the reference; unknown-label clips are
// scored too (evaluation skips them later).
inline std::vector<ClipScore> score_clips_locked(const PipelineConfig& cfg,
                                                 const std::filesystem::path& cache,
                                                 anomaly::ReferenceModel& ref_out,
                                                 std::vector<std::string>* warnings) {
    const std::filesystem::path ref_path = fit_locked(cfg, cache, warnings);
    const std::filesystem::path emb_path =
        embed_locked(cfg, corpus::Split::test, cache, warnings);
    ref_out = anomaly::load_reference(ref_path);

    const corpus::Manifest manifest = scan_with_hint(cfg, warnings);
    std::map<std::string, corpus::ClipMeta> by_path;
    for (const auto& e : manifest.entries) by_path[e.path.string()] = e;

    const std::vector<anomaly::EmbeddingRow> rows = anomaly::load_embeddings_csv(emb_path);
    std::vector<ClipScore> out;
    std::size_t i = 0;
    while (i < rows.size()) {
        const std::string& path = rows[i].clip_path;
        std::vector<std::vector<double>> segs;
        while (i < rows.size() && rows[i].clip_path == path) segs.push_back(rows[i++].values);
        const auto it = by_path.find(path);
        if (it == by_path.end())
            throw IoFailure("embeddings reference a clip missing from the dataset: " +
                            path);
        ClipScore cs;
        cs.meta = it->second;
        cs.result =
            anomaly::decide(anomaly::score_clip(segs, ref_out, cfg.reducer), ref_out, cfg.q);
        cs.result.clip = cs.meta;
        out.push_back(std::move(cs));
    }
    return out;
}

inline std::filesystem::path write_scores_csv(const PipelineConfig& cfg,
                                              const std::vector<ClipScore>& scores) {
    const std::filesystem::path out = cfg.out_dir / "scores.csv";
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw IoFailure("cannot write " + out.string());
    f << "clip_path,machine,section,domain,label,score,threshold,decision\n";
    for (const auto& s : scores)
        f << s.meta.path.string() << ',' << corpus::to_string(s.meta.machine) << ','
          << s.meta.section << ',' << corpus::to_string(s.meta.domain) << ','
          << corpus::to_string(s.meta.label) << ','
          << metrics::detail::fmt_double(s.result.score) << ','
          << metrics::detail::fmt_double(s.result.threshold_used) << ','
          << corpus::to_string(s.result.decision) << '\n';
    return out;
}

inline metrics::ScoredSet to_scored_set(const std::vector<ClipScore>& scores,
                                        std::vector<std::string>* warnings) {
    metrics::ScoredSet set;
    for (const auto& s : scores) {
        if (s.meta.label == corpus::Label::unknown) {
            if (warnings)
                warnings->push_back("unlabeled test clip skipped in evaluation: " +
                                    s.meta.path.string());
            continue;
        }
        set.scores.push_back(s.result.score);
        set.labels.push_back(s.meta.label == corpus::Label::anomaly ? 1 : 0);
        metrics::Stratum st;
        st.machine = corpus::to_string(s.meta.machine);
        st.section = s.meta.section;
        st.domain = s.meta.domain;
        set.strata.push_back(std::move(st));
    }
    return set;
}

struct ReportPaths {
    std::filesystem::path csv, md, plot;
};

inline ReportPaths emit_report_files(const metrics::EvalReport& report,
                                     const std::filesystem::path& out_dir,
                                     const std::string& stem) {
    ReportPaths paths{out_dir / (stem + ".csv"), out_dir / (stem + ".md"),
                      out_dir / (stem + ".plot.csv")};
    metrics::emit_report(report, metrics::ReportFormat::csv, paths.csv);
    metrics::emit_report(report, metrics::ReportFormat::markdown, paths.md);
    metrics::emit_report(report, metrics::ReportFormat::plotdata, paths.plot);
    return paths;
}

}  // namespace detail

inline TrainArtifacts cmd_train(const PipelineConfig& cfg,
                                std::vector<std::string>* warnings = nullptr) {
    const std::filesystem::path cache = cache_dir(cfg);
    CacheLock lock(cache);
    std::filesystem::create_directories(cfg.out_dir);
    return detail::train_locked(cfg, cache, warnings);
}

inline std::filesystem::path cmd_embed(const PipelineConfig& cfg, corpus::Split split,
                                       std::vector<std::string>* warnings = nullptr) {
    const std::filesystem::path cache = cache_dir(cfg);
    CacheLock lock(cache);
    std::filesystem::create_directories(cfg.out_dir);
    return detail::embed_locked(cfg, split, cache, warnings);
}

inline std::filesystem::path cmd_fit(const PipelineConfig& cfg,
                                     std::vector<std::string>* warnings = nullptr) {
    const std::filesystem::path cache = cache_dir(cfg);
    CacheLock lock(cache);
    std::filesystem::create_directories(cfg.out_dir);
    return detail::fit_locked(cfg, cache, warnings);
}

inline std::filesystem::path cmd_score(const PipelineConfig& cfg,
                                       std::vector<std::string>* warnings = nullptr) {
    const std::filesystem::path cache = cache_dir(cfg);
    CacheLock lock(cache);
    std::filesystem::create_directories(cfg.out_dir);
    anomaly::ReferenceModel ref;
    const std::vector<detail::ClipScore> scores =
        detail::score_clips_locked(cfg, cache, ref, warnings);
    return detail::write_scores_csv(cfg, scores);
}

struct EvaluateArtifacts {
    metrics::EvalReport report;
    std::filesystem::path scores_csv;
    std::filesystem::path report_csv, report_md, report_plot;
};

inline EvaluateArtifacts cmd_evaluate(const PipelineConfig& cfg,
                                      std::vector<std::string>* warnings = nullptr) {
    const std::filesystem::path cache = cache_dir(cfg);
    CacheLock lock(cache);
    std::filesystem::create_directories(cfg.out_dir);
    anomaly::ReferenceModel ref;
    const std::vector<detail::ClipScore> scores =
        detail::score_clips_locked(cfg, cache, ref, warnings);

    EvaluateArtifacts out;
    out.scores_csv = detail::write_scores_csv(cfg, scores);
    const metrics::ScoredSet set = detail::to_scored_set(scores, warnings);
    out.report = metrics::evaluate_scores(set, cfg.band, cfg.q, cfg.pauc_p, warnings);
    const detail::ReportPaths paths =
        detail::emit_report_files(out.report, cfg.out_dir, "report");
    out.report_csv = paths.csv;
    out.report_md = paths.md;
    out.report_plot = paths.plot;
    return out;
}

struct SweepArtifacts {
    metrics::EvalReport report;
    std::filesystem::path csv, md, plot;
};

inline SweepArtifacts cmd_threshold_sweep(const PipelineConfig& cfg,
                                          const std::vector<double>& grid_override = {},
                                          std::vector<std::string>* warnings = nullptr) {
    const std::filesystem::path cache = cache_dir(cfg);
    CacheLock lock(cache);
    std::filesystem::create_directories(cfg.out_dir);
    anomaly::ReferenceModel ref;
    const std::vector<detail::ClipScore> scores =
        detail::score_clips_locked(cfg, cache, ref, warnings);
    const metrics::ScoredSet set = detail::to_scored_set(scores, warnings);

    SweepArtifacts out;
    out.report = metrics::run_threshold_sweep(
        ref, set, grid_override.empty() ? cfg.q_grid : grid_override, cfg.band);
    const detail::ReportPaths paths =
        detail::emit_report_files(out.report, cfg.out_dir, "threshold_sweep");
    out.csv = paths.csv;
    out.md = paths.md;
    out.plot = paths.plot;
    return out;
}

// Self-contained per-band pipelines; checkpoints are not kept and the feature
// cache is not consulted because each band changes the features themselves.
inline SweepArtifacts cmd_band_sweep(const PipelineConfig& cfg,
                                     const std::vector<dsp::FrequencyBand>& bands_override = {},
                                     std::vector<std::string>* warnings = nullptr) {
    const corpus::Manifest manifest = detail::scan_with_hint(cfg, warnings);
    std::filesystem::create_directories(cfg.out_dir);
    const std::filesystem::path partial = cfg.out_dir / "band_sweep.partial.csv";
    std::error_code ec;
    std::filesystem::remove(partial, ec);  // stale partial from an aborted run

    SweepArtifacts out;
    out.report = metrics::run_band_sweep(manifest, cfg.sweep_recipe(), bands_override,
                                         cfg.q, partial, warnings);
    const detail::ReportPaths paths =
        detail::emit_report_files(out.report, cfg.out_dir, "band_sweep");
    out.csv = paths.csv;
    out.md = paths.md;
    out.plot = paths.plot;
    return out;
}

}  // namespace aad::pipeline
