#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "aad/pipeline.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;
using aad::config::PipelineConfig;
using testutil::TempDir;

namespace {

// Small but structurally complete setup: 12 train clips across 3 sections,
// 4 normal + 4 anomalous test clips, 2.5 s each (one segment per clip).
PipelineConfig tiny_config(const TempDir& tmp) {
    PipelineConfig cfg;
    cfg.dataset_root = tmp.path / "data";
    cfg.machine = aad::corpus::Machine::Slider;
    cfg.out_dir = tmp.path / "out";
    cfg.band = {2000.0, 5000.0};
    cfg.width_mult = 0.1;
    cfg.dropout_rate = 0.0;
    cfg.epochs = 2;
    cfg.checkpoint_every = 1;
    cfg.lr = 1e-3;
    cfg.batch_size = 8;
    cfg.seed = 7;
    cfg.synth.duration_s = 2.5;
    cfg.synth.n_train = 12;
    cfg.synth.n_test_normal = 4;
    cfg.synth.n_test_anomaly = 4;
    return cfg;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t data_lines(const fs::path& csv) {
    std::ifstream in(csv);
    REQUIRE(in);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line))
        if (!line.empty() && line[0] != '#') ++n;
    return n > 0 ? n - 1 : 0;  // minus header
}

}  // namespace

TEST_CASE("synth corpus and ingest agree on the manifest") {
    TempDir tmp("pipe_ingest");
    const PipelineConfig cfg = tiny_config(tmp);
    const fs::path manifest_path = aad::pipeline::cmd_synth_corpus(cfg);
    REQUIRE(fs::exists(manifest_path));
    const aad::corpus::Manifest manifest = aad::corpus::load_manifest(manifest_path);
    CHECK(manifest.entries.size() == 20);
    CHECK(manifest.select(aad::corpus::Split::train).size() == 12);
    CHECK(manifest.select(aad::corpus::Split::test).size() == 8);

    const std::string from_synth = slurp(manifest_path);
    std::vector<std::string> warnings;
    CHECK(aad::pipeline::cmd_ingest(cfg, &warnings) == manifest_path);
    CHECK(slurp(manifest_path) == from_synth);
    CHECK(warnings.empty());
}

TEST_CASE("pseudo synthesis is idempotent and tracks its sources") {
    TempDir tmp("pipe_pseudo");
    const PipelineConfig cfg = tiny_config(tmp);
    aad::pipeline::cmd_synth_corpus(cfg);

    auto first = aad::pipeline::cmd_synth_pseudo(cfg);
    CHECK(first.written.size() == 24);  // 12 train clips x 2 shifts
    CHECK(first.skipped == 0);
    const fs::path pseudo_dir = cfg.dataset_root / "slider" / "pseudo";
    CHECK(fs::exists(pseudo_dir / "index.json"));
    CHECK(aad::corpus::scan_pseudo_dir(cfg.dataset_root, cfg.machine).size() == 24);

    auto second = aad::pipeline::cmd_synth_pseudo(cfg);
    CHECK(second.written.empty());
    CHECK(second.skipped == 24);

    // a deleted file is regenerated, everything else stays skipped
    fs::remove(first.written.front());
    auto third = aad::pipeline::cmd_synth_pseudo(cfg);
    CHECK(third.written.size() == 1);
    CHECK(third.written.front() == first.written.front());
    CHECK(third.skipped == 23);

    PipelineConfig no_shifts = cfg;
    no_shifts.augment.pitch_semitones.clear();
    std::vector<std::string> warnings;
    auto nothing = aad::pipeline::cmd_synth_pseudo(no_shifts, &warnings);
    CHECK(nothing.written.empty());
    CHECK(nothing.skipped == 0);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("no-op") != std::string::npos);
}

TEST_CASE("feature cache computes once and is keyed by the dsp settings") {
    TempDir tmp("pipe_cache");
    const PipelineConfig cfg = tiny_config(tmp);
    aad::pipeline::cmd_synth_corpus(cfg);
    aad::pipeline::cmd_synth_pseudo(cfg);

    auto cold = aad::pipeline::cmd_features(cfg);
    CHECK(cold.computed == 44);  // 12 train + 8 test + 24 pseudo
    CHECK(cold.cached == 0);

    auto warm = aad::pipeline::cmd_features(cfg);
    CHECK(warm.computed == 0);
    CHECK(warm.cached == 44);

    PipelineConfig other_band = cfg;
    other_band.band = {0.0, 8000.0};
    auto rekeyed = aad::pipeline::cmd_features(other_band);
    CHECK(rekeyed.computed == 44);
    CHECK(rekeyed.cached == 0);

    PipelineConfig no_pseudo = cfg;
    no_pseudo.use_pseudo = false;
    auto trimmed = aad::pipeline::cmd_features(no_pseudo);
    CHECK(trimmed.computed == 0);
    CHECK(trimmed.cached == 20);
}

TEST_CASE("train writes the checkpoint schedule and clears stale checkpoints") {
    TempDir tmp("pipe_train");
    PipelineConfig cfg = tiny_config(tmp);
    aad::pipeline::cmd_synth_corpus(cfg);

    const auto artifacts = aad::pipeline::cmd_train(cfg);
    REQUIRE(artifacts.checkpoints.size() == 2);
    CHECK(artifacts.checkpoints[0].filename() == "checkpoint_epoch_001.aadm");
    CHECK(artifacts.checkpoints[1].filename() == "checkpoint_epoch_002.aadm");
    CHECK(fs::exists(artifacts.log_csv));
    CHECK(data_lines(artifacts.log_csv) == 2);

    // a shorter retrain must not leave the old epoch-2 checkpoint behind
    cfg.epochs = 1;
    const auto shorter = aad::pipeline::cmd_train(cfg);
    REQUIRE(shorter.checkpoints.size() == 1);
    CHECK(shorter.checkpoints[0].filename() == "checkpoint_epoch_001.aadm");
    CHECK_FALSE(fs::exists(artifacts.checkpoints[1]));
}

TEST_CASE("train without a dataset names the fix") {
    TempDir tmp("pipe_nodata");
    const PipelineConfig cfg = tiny_config(tmp);
    try {
        aad::pipeline::cmd_train(cfg);
        FAIL("expected EmptyDataset");
    } catch (const aad::EmptyDataset& e) {
        CHECK(std::string(e.what()).find("synth-corpus") != std::string::npos);
    }
}

TEST_CASE("embed pools train checkpoints and reuses fresh artifacts") {
    TempDir tmp("pipe_embed");
    const PipelineConfig cfg = tiny_config(tmp);
    aad::pipeline::cmd_synth_corpus(cfg);
    aad::pipeline::cmd_synth_pseudo(cfg);
    aad::pipeline::cmd_train(cfg);

    const fs::path train_csv = aad::pipeline::cmd_embed(cfg, aad::corpus::Split::train);
    const auto train_rows = aad::anomaly::load_embeddings_csv(train_csv);
    CHECK(train_rows.size() == 24);  // 12 clips x 2 pooled checkpoints
    REQUIRE_FALSE(train_rows.empty());
    CHECK(train_rows[0].values.size() == 4);  // 3 sections + 1 pseudo class

    const fs::path test_csv = aad::pipeline::cmd_embed(cfg, aad::corpus::Split::test);
    const auto test_rows = aad::anomaly::load_embeddings_csv(test_csv);
    CHECK(test_rows.size() == 8);  // final checkpoint only

    // fresh artifacts are not rewritten; a missing stamp forces a rebuild
    const std::string content_before = slurp(train_csv);
    const auto stamp_before = fs::last_write_time(train_csv);
    aad::pipeline::cmd_embed(cfg, aad::corpus::Split::train);
    CHECK(fs::last_write_time(train_csv) == stamp_before);
    fs::remove(train_csv.string() + ".key");
    aad::pipeline::cmd_embed(cfg, aad::corpus::Split::train);
    CHECK(slurp(train_csv) == content_before);  // rebuilt deterministically
}

TEST_CASE("training without pseudo clips drops the extra class") {
    TempDir tmp("pipe_nopseudo");
    PipelineConfig cfg = tiny_config(tmp);
    cfg.use_pseudo = false;
    aad::pipeline::cmd_synth_corpus(cfg);
    aad::pipeline::cmd_train(cfg);
    const fs::path csv = aad::pipeline::cmd_embed(cfg, aad::corpus::Split::test);
    const auto rows = aad::anomaly::load_embeddings_csv(csv);
    REQUIRE_FALSE(rows.empty());
    CHECK(rows[0].values.size() == 3);
}

TEST_CASE("fit produces a loadable reference over pooled train embeddings") {
    TempDir tmp("pipe_fit");
    const PipelineConfig cfg = tiny_config(tmp);
    aad::pipeline::cmd_synth_corpus(cfg);
    aad::pipeline::cmd_train(cfg);

    const fs::path ref_path = aad::pipeline::cmd_fit(cfg);
    const aad::anomaly::ReferenceModel ref = aad::anomaly::load_reference(ref_path);
    CHECK(ref.metric == aad::anomaly::Metric::mahalanobis);
    CHECK(ref.dim() == 3);  // no pseudo clips were generated
    CHECK(ref.gamma.shape > 0.0);
    CHECK(ref.gamma.scale > 0.0);
    CHECK(ref.provenance.find("24 embeddings") != std::string::npos);

    const auto stamp_before = fs::last_write_time(ref_path);
    aad::pipeline::cmd_fit(cfg);
    CHECK(fs::last_write_time(ref_path) == stamp_before);
}

TEST_CASE("evaluate builds the whole chain on demand and is deterministic") {
    TempDir tmp("pipe_eval");
    const PipelineConfig cfg = tiny_config(tmp);
    aad::pipeline::cmd_synth_corpus(cfg);

    std::vector<std::string> warnings;
    const auto artifacts = aad::pipeline::cmd_evaluate(cfg, &warnings);
    CHECK(fs::exists(cfg.out_dir / "checkpoints" / "checkpoint_epoch_002.aadm"));
    CHECK(fs::exists(artifacts.scores_csv));
    CHECK(fs::exists(artifacts.report_csv));
    CHECK(fs::exists(artifacts.report_md));
    CHECK(fs::exists(artifacts.report_plot));
    CHECK(data_lines(artifacts.scores_csv) == 8);
    REQUIRE_FALSE(artifacts.report.rows.empty());
    CHECK(artifacts.report.rows[0].machine == "slider");
    CHECK(artifacts.report.rows[0].domain == "pooled");
    const bool trained_on_demand =
        std::any_of(warnings.begin(), warnings.end(), [](const std::string& w) {
            return w.find("training first") != std::string::npos;
        });
    CHECK(trained_on_demand);

    // reports round-trip, and a rerun reproduces them byte for byte
    const auto reloaded = aad::metrics::load_report_csv(artifacts.report_csv);
    CHECK(reloaded.rows.size() == artifacts.report.rows.size());
    const std::string report_before = slurp(artifacts.report_csv);
    const std::string scores_before = slurp(artifacts.scores_csv);
    aad::pipeline::cmd_evaluate(cfg);
    CHECK(slurp(artifacts.report_csv) == report_before);
    CHECK(slurp(artifacts.scores_csv) == scores_before);
}

TEST_CASE("score writes one row per test clip with decisions") {
    TempDir tmp("pipe_score");
    const PipelineConfig cfg = tiny_config(tmp);
    aad::pipeline::cmd_synth_corpus(cfg);
    const fs::path scores_csv = aad::pipeline::cmd_score(cfg);
    std::ifstream in(scores_csv);
    std::string header;
    REQUIRE(std::getline(in, header));
    CHECK(header == "clip_path,machine,section,domain,label,score,threshold,decision");
    std::set<std::string> decisions;
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        decisions.insert(line.substr(line.rfind(',') + 1));
    }
    CHECK(rows == 8);
    for (const auto& d : decisions) CHECK((d == "normal" || d == "anomaly"));
}

TEST_CASE("threshold sweep reports each grid point per stratum view") {
    TempDir tmp("pipe_thresh");
    const PipelineConfig cfg = tiny_config(tmp);
    aad::pipeline::cmd_synth_corpus(cfg);
    const auto artifacts = aad::pipeline::cmd_threshold_sweep(cfg, {0.85, 0.9});
    // stratum views: pooled, source-only, and three sections; two grid points
    CHECK(artifacts.report.rows.size() == 10);
    std::set<double> qs;
    for (const auto& row : artifacts.report.rows) {
        qs.insert(row.q);
        CHECK(row.metrics.size() == 4);  // precision, recall, f1, fpr
    }
    CHECK(qs == std::set<double>{0.85, 0.9});
    CHECK(fs::exists(artifacts.csv));
    CHECK(fs::exists(artifacts.md));
    CHECK(fs::exists(artifacts.plot));
}

TEST_CASE("band sweep appends the full-band control and reports per band") {
    TempDir tmp("pipe_band");
    PipelineConfig cfg = tiny_config(tmp);
    cfg.use_pseudo = false;  // keep the per-band trainings small
    aad::pipeline::cmd_synth_corpus(cfg);
    const auto artifacts = aad::pipeline::cmd_band_sweep(cfg, {{2000.0, 5000.0}});

    std::set<std::pair<double, double>> bands;
    for (const auto& row : artifacts.report.rows)
        bands.insert({row.band_lo_hz, row.band_hi_hz});
    CHECK(bands == std::set<std::pair<double, double>>{{2000.0, 5000.0}, {0.0, 8000.0}});
    CHECK(fs::exists(artifacts.csv));
    CHECK_FALSE(fs::exists(cfg.out_dir / "band_sweep.partial.csv"));
}

TEST_CASE("the cache lock excludes a second writer until released") {
    TempDir tmp("pipe_lock");
    const fs::path cache = tmp.path / "cache";
    {
        aad::pipeline::CacheLock held(cache);
        CHECK(fs::exists(cache / ".lock"));
        CHECK_THROWS_AS(aad::pipeline::CacheLock(cache, 200), aad::IoFailure);
    }
    CHECK_FALSE(fs::exists(cache / ".lock"));
    CHECK_NOTHROW(aad::pipeline::CacheLock(cache, 200));
}
