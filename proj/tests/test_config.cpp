#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "aad/config.hpp"
#include "helpers.hpp"

using aad::config::config_from_json;
using aad::config::config_to_json;
using aad::config::load_config;
using aad::config::PipelineConfig;
using nlohmann::json;
using testutil::TempDir;

TEST_CASE("defaults reproduce the study constants") {
    const PipelineConfig cfg;
    CHECK(cfg.sample_rate == 16000);
    CHECK(cfg.n_fft == 2048);
    CHECK(cfg.hop == 1024);
    CHECK(cfg.n_mels == 128);
    CHECK(cfg.band.f_lo == 0.0);
    CHECK(cfg.band.f_hi == 8000.0);
    CHECK(cfg.segmenting);
    CHECK(cfg.segment_len_s == 2.5);
    CHECK(cfg.segment_overlap == 0.5);
    CHECK(cfg.width_mult == 1.0);
    CHECK(cfg.dropout_rate == 0.3);
    CHECK(cfg.embedding_source == aad::net::EmbeddingSource::softmax);
    CHECK(cfg.epochs == 30);
    CHECK(cfg.lr == 1e-4);
    CHECK(cfg.batch_size == 32);
    CHECK(cfg.checkpoint_every == 20);
    CHECK(cfg.seed == 0);
    CHECK(cfg.metric == aad::anomaly::Metric::mahalanobis);
    CHECK(cfg.q == 0.9);
    CHECK(cfg.reducer == aad::anomaly::Reducer::mean);
    CHECK(cfg.pauc_p == 0.1);
    REQUIRE(cfg.q_grid.size() == 11);
    CHECK(cfg.q_grid.front() == Catch::Approx(0.85));
    CHECK(cfg.q_grid.back() == Catch::Approx(0.95));
    CHECK(cfg.augment.pitch_semitones == std::vector<double>{-2.0, 2.0});
    CHECK(cfg.augment.specaug_time_width == 10);
    CHECK(cfg.augment.specaug_freq_width == 10);
    CHECK(cfg.augment.mixup_beta_alpha == 0.4);
    CHECK(cfg.use_specaugment);
    CHECK(cfg.use_mixup);
    CHECK(cfg.use_pseudo);
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("json round trip preserves every field") {
    PipelineConfig cfg;
    cfg.dataset_root = "/tmp/somewhere";
    cfg.machine = aad::corpus::Machine::ToyCar;
    cfg.out_dir = "/tmp/out";
    cfg.sample_rate = 22050;
    cfg.n_fft = 1024;
    cfg.hop = 256;
    cfg.n_mels = 64;
    cfg.band = {1000.0, 4000.0};
    cfg.segmenting = false;
    cfg.segment_len_s = 2.0;
    cfg.segment_overlap = 0.25;
    cfg.augment.pitch_semitones = {-1.0, 0.5, 1.0};
    cfg.augment.specaug_time_width = 4;
    cfg.augment.specaug_freq_width = 6;
    cfg.augment.mixup_beta_alpha = 0.2;
    cfg.augment.mixup_uniform_prob = 0.3;
    cfg.use_specaugment = false;
    cfg.use_mixup = false;
    cfg.use_pseudo = false;
    cfg.width_mult = 0.25;
    cfg.dropout_rate = 0.1;
    cfg.embedding_source = aad::net::EmbeddingSource::penultimate;
    cfg.epochs = 5;
    cfg.lr = 1e-3;
    cfg.batch_size = 16;
    cfg.checkpoint_every = 2;
    cfg.seed = 1234567;
    cfg.metric = aad::anomaly::Metric::euclidean;
    cfg.q = 0.8;
    cfg.reducer = aad::anomaly::Reducer::max;
    cfg.pauc_p = 0.2;
    cfg.q_grid = {0.8, 0.9};
    cfg.synth.n_train = 9;
    cfg.synth.duration_s = 3.0;
    cfg.synth.anomaly_tone_hz = 2500.0;

    const PipelineConfig back = config_from_json(config_to_json(cfg));
    CHECK(back.dataset_root == cfg.dataset_root);
    CHECK(back.machine == cfg.machine);
    CHECK(back.out_dir == cfg.out_dir);
    CHECK(back.sample_rate == cfg.sample_rate);
    CHECK(back.n_fft == cfg.n_fft);
    CHECK(back.hop == cfg.hop);
    CHECK(back.n_mels == cfg.n_mels);
    CHECK(back.band.f_lo == cfg.band.f_lo);
    CHECK(back.band.f_hi == cfg.band.f_hi);
    CHECK(back.segmenting == cfg.segmenting);
    CHECK(back.segment_len_s == cfg.segment_len_s);
    CHECK(back.segment_overlap == cfg.segment_overlap);
    CHECK(back.augment.pitch_semitones == cfg.augment.pitch_semitones);
    CHECK(back.augment.specaug_time_width == cfg.augment.specaug_time_width);
    CHECK(back.augment.specaug_freq_width == cfg.augment.specaug_freq_width);
    CHECK(back.augment.mixup_beta_alpha == cfg.augment.mixup_beta_alpha);
    CHECK(back.augment.mixup_uniform_prob == cfg.augment.mixup_uniform_prob);
    CHECK(back.use_specaugment == cfg.use_specaugment);
    CHECK(back.use_mixup == cfg.use_mixup);
    CHECK(back.use_pseudo == cfg.use_pseudo);
    CHECK(back.width_mult == cfg.width_mult);
    CHECK(back.dropout_rate == cfg.dropout_rate);
    CHECK(back.embedding_source == cfg.embedding_source);
    CHECK(back.epochs == cfg.epochs);
    CHECK(back.lr == cfg.lr);
    CHECK(back.batch_size == cfg.batch_size);
    CHECK(back.checkpoint_every == cfg.checkpoint_every);
    CHECK(back.seed == cfg.seed);
    CHECK(back.metric == cfg.metric);
    CHECK(back.q == cfg.q);
    CHECK(back.reducer == cfg.reducer);
    CHECK(back.pauc_p == cfg.pauc_p);
    CHECK(back.q_grid == cfg.q_grid);
    CHECK(back.synth.n_train == cfg.synth.n_train);
    CHECK(back.synth.duration_s == cfg.synth.duration_s);
    CHECK(back.synth.anomaly_tone_hz == cfg.synth.anomaly_tone_hz);
}

TEST_CASE("partial config keeps defaults for absent keys") {
    const PipelineConfig cfg = config_from_json(json{{"train", {{"epochs", 60}}}});
    CHECK(cfg.epochs == 60);
    CHECK(cfg.lr == 1e-4);
    CHECK(cfg.batch_size == 32);
    CHECK(cfg.n_fft == 2048);
    CHECK(cfg.machine == aad::corpus::Machine::Fan);
}

TEST_CASE("default band tracks the configured sample rate") {
    const PipelineConfig cfg = config_from_json(json{{"sample_rate", 8000}});
    CHECK(cfg.band.f_lo == 0.0);
    CHECK(cfg.band.f_hi == 4000.0);
}

TEST_CASE("unknown keys are rejected at every nesting level") {
    CHECK_THROWS_AS(config_from_json(json{{"bogus", 1}}), aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"train", {{"bogus", 1}}}}), aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"stft", {{"nfft", 2048}}}}), aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"augment", {{"pitch", 2}}}}), aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"eval", {{"p", 0.1}}}}), aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"synth", {{"n", 3}}}}), aad::InvalidConfig);
    // derived fields are not configurable, so they count as unknown
    CHECK_THROWS_AS(config_from_json(json{{"model", {{"num_classes", 4}}}}),
                    aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"model", {{"input_mels", 128}}}}),
                    aad::InvalidConfig);
    CHECK_THROWS_WITH(config_from_json(json{{"train", {{"epohcs", 60}}}}),
                      Catch::Matchers::ContainsSubstring("epohcs") &&
                          Catch::Matchers::ContainsSubstring("train"));
}

TEST_CASE("module preconditions are enforced at load time") {
    CHECK_THROWS_AS(config_from_json(json{{"band", {{"f_lo", 0.0}, {"f_hi", 9000.0}}}}),
                    aad::InvalidBand);  // above the 8 kHz nyquist
    CHECK_THROWS_AS(config_from_json(json{{"anomaly", {{"q", 1.2}}}}), aad::QOutOfRange);
    CHECK_THROWS_AS(config_from_json(json{{"train", {{"epochs", 0}}}}), aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"train", {{"batch_size", 0}}}}),
                    aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"model", {{"width_mult", 1.5}}}}),
                    aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"model", {{"dropout_rate", 1.0}}}}),
                    aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"segment", {{"overlap", 1.0}}}}),
                    aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"eval", {{"pauc_p", 0.0}}}}), aad::InvalidP);
    CHECK_THROWS_AS(config_from_json(json{{"eval", {{"q_grid", {0.5, 1.0}}}}}),
                    aad::InvalidGrid);
    CHECK_THROWS_AS(config_from_json(json{{"eval", {{"q_grid", json::array()}}}}),
                    aad::InvalidGrid);
    CHECK_THROWS_AS(
        config_from_json(json{{"augment", {{"pitch_semitones", {-13.0, 13.0}}}}}),
        aad::ShiftOutOfRange);
    CHECK_THROWS_AS(config_from_json(json{{"stft", {{"n_fft", 1000}}}}),
                    aad::InvalidConfig);  // not a power of two
    CHECK_THROWS_AS(config_from_json(json{{"stft", {{"hop", 4096}}}}), aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"n_mels", 2000}}), aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"synth", {{"n_train", 0}}}}), aad::InvalidConfig);
}

TEST_CASE("type mismatches are config errors") {
    CHECK_THROWS_AS(config_from_json(json{{"train", {{"epochs", "thirty"}}}}),
                    aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"segmenting", 1}}), aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"train", {{"seed", -5}}}}), aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"machine", 3}}), aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"augment", {{"pitch_semitones", {"a"}}}}}),
                    aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json{{"train", {{"lr", "fast"}}}}), aad::InvalidConfig);
    CHECK_THROWS_AS(config_from_json(json::array()), aad::InvalidConfig);
}

TEST_CASE("machine and enum fields parse from their names") {
    CHECK(config_from_json(json{{"machine", "slider"}}).machine ==
          aad::corpus::Machine::Slider);
    CHECK(config_from_json(json{{"machine", "ToyCar"}}).machine ==
          aad::corpus::Machine::ToyCar);
    CHECK_THROWS_AS(config_from_json(json{{"machine", "toaster"}}), aad::InvalidConfig);
    CHECK(config_from_json(json{{"anomaly", {{"metric", "euclidean"}}}}).metric ==
          aad::anomaly::Metric::euclidean);
    CHECK_THROWS_AS(config_from_json(json{{"anomaly", {{"metric", "cosine"}}}}),
                    aad::InvalidConfig);
    CHECK(config_from_json(json{{"anomaly", {{"reducer", "max"}}}}).reducer ==
          aad::anomaly::Reducer::max);
    CHECK(config_from_json(json{{"model", {{"embedding_source", "penultimate"}}}})
              .embedding_source == aad::net::EmbeddingSource::penultimate);
    CHECK_THROWS_AS(config_from_json(json{{"model", {{"embedding_source", "logits"}}}}),
                    aad::InvalidConfig);
}

TEST_CASE("load_config reads a file and reports unreadable ones") {
    TempDir tmp("config");
    const std::filesystem::path path = tmp.path / "cfg.json";
    {
        std::ofstream out(path);
        out << R"({"train": {"epochs": 3}, "anomaly": {"q": 0.8}})";
    }
    const PipelineConfig cfg = load_config(path);
    CHECK(cfg.epochs == 3);
    CHECK(cfg.q == 0.8);

    CHECK_THROWS_AS(load_config(tmp.path / "missing.json"), aad::IoFailure);

    const std::filesystem::path broken = tmp.path / "broken.json";
    {
        std::ofstream out(broken);
        out << "{not json";
    }
    CHECK_THROWS_AS(load_config(broken), aad::InvalidConfig);
}

TEST_CASE("adapters hand module configs the right fields") {
    PipelineConfig cfg;
    cfg.n_mels = 64;
    cfg.width_mult = 0.5;
    cfg.dropout_rate = 0.2;
    cfg.epochs = 7;
    cfg.lr = 2e-3;
    cfg.batch_size = 4;
    cfg.checkpoint_every = 3;
    cfg.seed = 42;
    cfg.use_specaugment = false;
    cfg.use_pseudo = false;
    cfg.metric = aad::anomaly::Metric::euclidean;
    cfg.reducer = aad::anomaly::Reducer::max;
    cfg.segmenting = false;
    cfg.pauc_p = 0.25;

    const aad::net::ModelConfig mc = cfg.model_config(5);
    CHECK(mc.num_classes == 5);
    CHECK(mc.width_mult == 0.5);
    CHECK(mc.dropout_rate == 0.2);
    CHECK(mc.input_mels == 64);

    const aad::net::TrainConfig tc = cfg.train_config("ckpts");
    CHECK(tc.epochs == 7);
    CHECK(tc.lr == 2e-3);
    CHECK(tc.batch_size == 4);
    CHECK(tc.checkpoint_every == 3);
    CHECK(tc.checkpoint_dir == std::filesystem::path("ckpts"));
    CHECK_FALSE(tc.use_specaugment);
    CHECK(tc.use_mixup);
    CHECK(tc.seed == 42);

    const aad::metrics::SweepRecipe recipe = cfg.sweep_recipe();
    CHECK(recipe.metric == aad::anomaly::Metric::euclidean);
    CHECK(recipe.reducer == aad::anomaly::Reducer::max);
    CHECK_FALSE(recipe.segmenting);
    CHECK(recipe.pauc_p == 0.25);
    CHECK_FALSE(recipe.include_pseudo);
    CHECK(recipe.train.checkpoint_dir.empty());
}
