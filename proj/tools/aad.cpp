// Command-line surface for the anomaly-detection pipeline. Every subcommand
// loads one JSON config (defaults reproduce the study settings), applies flag
// overrides (flags win), runs the corresponding pipeline command, and prints
// each artifact it wrote. Exit codes: 0 ok, 2 config error, 3 data error,
// 4 numeric failure.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aad/config.hpp"
#include "aad/pipeline.hpp"

namespace {

std::vector<aad::dsp::FrequencyBand> parse_bands(const std::string& arg) {
    std::vector<aad::dsp::FrequencyBand> bands;
    std::stringstream ss(arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        const auto colon = tok.find(':');
        if (colon == std::string::npos)
            throw aad::InvalidConfig("cannot parse band '" + tok +
                                     "'; expected lo:hi in Hz");
        try {
            bands.push_back({std::stod(tok.substr(0, colon)), std::stod(tok.substr(colon + 1))});
        } catch (const std::exception&) {
            throw aad::InvalidConfig("cannot parse band '" + tok +
                                     "'; expected lo:hi in Hz");
        }
    }
    if (bands.empty()) throw aad::InvalidConfig("--bands is empty");
    return bands;
}

std::vector<double> parse_q_grid(const std::string& arg) {
    std::vector<double> grid;
    std::stringstream ss(arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            grid.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw aad::InvalidConfig("cannot parse quantile '" + tok + "' in --q-grid");
        }
    }
    if (grid.empty()) throw aad::InvalidGrid("--q-grid is empty");
    return grid;
}

void print_warnings(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

void wrote(const std::filesystem::path& path) {
    std::printf("wrote %s\n", path.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"band-focused machine-sound anomaly detection pipeline"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand name

    std::string config_path, machine_name, out_dir, format_name = "csv";
    std::uint64_t seed = 0;
    auto* opt_config = app.add_option("--config", config_path, "JSON config file");
    auto* opt_seed = app.add_option("--seed", seed, "override train.seed");
    auto* opt_machine = app.add_option("--machine", machine_name,
                                       "override the machine type (e.g. fan, slider)");
    auto* opt_out = app.add_option("--out", out_dir, "override out_dir");
    app.add_option("--format", format_name, "report format echoed to stdout")
        ->check(CLI::IsMember({"csv", "markdown", "plotdata"}));
    (void)opt_config;

    std::string split_name = "test", bands_arg, q_grid_arg;
    auto* c_ingest = app.add_subcommand("ingest", "scan the dataset into manifest.json");
    auto* c_synth = app.add_subcommand("synth-corpus", "generate the synthetic corpus");
    auto* c_pseudo =
        app.add_subcommand("synth-pseudo", "write pitch-shifted pseudo train clips");
    auto* c_features = app.add_subcommand("features", "warm the mel feature cache");
    auto* c_train = app.add_subcommand("train", "train the classifier, saving checkpoints");
    auto* c_embed = app.add_subcommand("embed", "extract embeddings for one split");
    c_embed->add_option("--split", split_name, "which split to embed")
        ->check(CLI::IsMember({"train", "test"}));
    auto* c_fit = app.add_subcommand("fit", "fit the reference model on train embeddings");
    auto* c_score = app.add_subcommand("score", "score test clips against the reference");
    auto* c_evaluate =
        app.add_subcommand("evaluate", "score and report AUC/pAUC per stratum");
    auto* c_band = app.add_subcommand("band-sweep", "run the pipeline across bands");
    c_band->add_option("--bands", bands_arg,
                       "override the band grid, e.g. 2000:5000,0:8000 (Hz)");
    auto* c_threshold =
        app.add_subcommand("threshold-sweep", "decision metrics across gamma quantiles");
    c_threshold->add_option("--q-grid", q_grid_arg, "override the quantile grid, e.g. 0.85,0.9");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad flags are config errors
    }

    try {
        aad::config::PipelineConfig cfg;
        if (!config_path.empty()) cfg = aad::config::load_config(config_path);
        if (opt_seed->count() > 0) cfg.seed = seed;
        if (opt_machine->count() > 0) cfg.machine = aad::corpus::machine_from_string(machine_name);
        if (opt_out->count() > 0) cfg.out_dir = out_dir;
        cfg.validate();
        const aad::metrics::ReportFormat format =
            aad::metrics::report_format_from_string(format_name);

        std::vector<std::string> warnings;
        if (*c_ingest) {
            wrote(aad::pipeline::cmd_ingest(cfg, &warnings));
        } else if (*c_synth) {
            wrote(aad::pipeline::cmd_synth_corpus(cfg));
        } else if (*c_pseudo) {
            const auto result = aad::pipeline::cmd_synth_pseudo(cfg, &warnings);
            for (const auto& p : result.written) wrote(p);
            std::printf("pseudo clips: %zu written, %zu up to date\n",
                        result.written.size(), result.skipped);
        } else if (*c_features) {
            const auto stats = aad::pipeline::cmd_features(cfg, &warnings);
            std::printf("features: %zu computed, %zu cached (cache %s)\n", stats.computed,
                        stats.cached, aad::pipeline::cache_dir(cfg).string().c_str());
        } else if (*c_train) {
            const auto artifacts = aad::pipeline::cmd_train(cfg, &warnings);
            for (const auto& c : artifacts.checkpoints) wrote(c);
            wrote(artifacts.log_csv);
        } else if (*c_embed) {
            wrote(aad::pipeline::cmd_embed(cfg,
                                           split_name == "train" ? aad::corpus::Split::train
                                                                 : aad::corpus::Split::test,
                                           &warnings));
        } else if (*c_fit) {
            wrote(aad::pipeline::cmd_fit(cfg, &warnings));
        } else if (*c_score) {
            wrote(aad::pipeline::cmd_score(cfg, &warnings));
        } else if (*c_evaluate) {
            const auto artifacts = aad::pipeline::cmd_evaluate(cfg, &warnings);
            wrote(artifacts.scores_csv);
            wrote(artifacts.report_csv);
            wrote(artifacts.report_md);
            wrote(artifacts.report_plot);
            std::cout << aad::metrics::format_report(artifacts.report, format);
        } else if (*c_band) {
            const std::vector<aad::dsp::FrequencyBand> bands =
                bands_arg.empty() ? std::vector<aad::dsp::FrequencyBand>{}
                                  : parse_bands(bands_arg);
            const auto artifacts = aad::pipeline::cmd_band_sweep(cfg, bands, &warnings);
            wrote(artifacts.csv);
            wrote(artifacts.md);
            wrote(artifacts.plot);
            std::cout << aad::metrics::format_report(artifacts.report, format);
        } else if (*c_threshold) {
            const std::vector<double> grid =
                q_grid_arg.empty() ? std::vector<double>{} : parse_q_grid(q_grid_arg);
            const auto artifacts = aad::pipeline::cmd_threshold_sweep(cfg, grid, &warnings);
            wrote(artifacts.csv);
            wrote(artifacts.md);
            wrote(artifacts.plot);
            std::cout << aad::metrics::format_report(artifacts.report, format);
        }
        print_warnings(warnings);
        return 0;
    } catch (const aad::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const aad::DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const aad::NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
}
