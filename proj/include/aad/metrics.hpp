#pragma once
// ROC metrics (AUC / partial AUC), stratified report assembly, and the
// band-sweep / threshold-sweep experiment runners.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "aad/anomaly.hpp"
#include "aad/net.hpp"

namespace aad::metrics {

// ---------------------------------------------------------------------------
// Scored sets
// ---------------------------------------------------------------------------

/// Identifies which slice of the dataset a score came from.
struct Stratum {
    std::string machine;
    int section = 0;
    corpus::Domain domain = corpus::Domain::source;
};

/// Parallel arrays of anomaly scores and ground-truth labels (1 = anomaly),
/// optionally annotated with per-score strata for report assembly.
struct ScoredSet {
    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<Stratum> strata;  // empty, or parallel to scores

    void validate() const {
        if (labels.size() != scores.size())
            throw DimensionMismatch("scores and labels must have equal length");
        if (!strata.empty() && strata.size() != scores.size())
            throw DimensionMismatch("strata must be empty or parallel to scores");
        for (int l : labels)
            if (l != 0 && l != 1) throw InvalidConfig("labels must be 0 or 1");
    }
};

namespace detail {

inline void require_both_classes(const ScoredSet& set) {
    set.validate();
    if (set.scores.empty()) throw EmptyInput("no scores");
    size_t n1 = 0;
    for (int l : set.labels) n1 += static_cast<size_t>(l);
    if (n1 == 0) throw OneClassOnly("no anomaly scores");
    if (n1 == set.labels.size()) throw OneClassOnly("no normal scores");
}

// ROC vertices from (0,0) to (1,1), thresholds descending; a block of tied
// scores becomes a single diagonal step, which is what gives tied pairs
// half credit in the trapezoidal area.
inline std::vector<std::pair<double, double>> roc_vertices(const ScoredSet& set) {
    const size_t n = set.scores.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return set.scores[a] > set.scores[b];
    });
    double n1 = 0.0;
    for (int l : set.labels) n1 += l;
    const double n0 = static_cast<double>(n) - n1;

    std::vector<std::pair<double, double>> verts{{0.0, 0.0}};
    double tp = 0.0, fp = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && set.scores[order[j]] == set.scores[order[i]]) {
            if (set.labels[order[j]] == 1)
                tp += 1.0;
            else
                fp += 1.0;
            ++j;
        }
        verts.emplace_back(fp / n0, tp / n1);
        i = j;
    }
    return verts;
}

}  // namespace detail

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (anomaly, normal) pairs ranked correctly, ties counted 1/2. Computed from
/// tie-averaged ranks, which matches brute-force pair counting exactly.
inline double auc(const ScoredSet& set) {
    detail::require_both_classes(set);
    const size_t n = set.scores.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return set.scores[a] < set.scores[b];
    });

    double rank_sum_anomaly = 0.0, n1 = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && set.scores[order[j]] == set.scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (size_t k = i; k < j; ++k)
            if (set.labels[order[k]] == 1) {
                rank_sum_anomaly += avg_rank;
                n1 += 1.0;
            }
        i = j;
    }
    const double n0 = static_cast<double>(n) - n1;
    const double u = rank_sum_anomaly - n1 * (n1 + 1.0) / 2.0;
    return u / (n1 * n0);
}

/// Partial AUC: ROC area restricted to false-positive rate in [0, p], with
/// linear interpolation at FPR = p, normalized by p so the result is in
/// [0, 1]. pauc(set, 1) equals auc(set).
inline double pauc(const ScoredSet& set, double p = 0.1) {
    if (!(p > 0.0) || p > 1.0) throw InvalidP("p must be in (0, 1]");
    detail::require_both_classes(set);

    const auto verts = detail::roc_vertices(set);
    double area = 0.0, pf = 0.0, pt = 0.0;
    for (size_t v = 1; v < verts.size(); ++v) {
        const double f = verts[v].first, t = verts[v].second;
        if (f >= p) {
            const double tp_at = f > pf ? pt + (t - pt) * (p - pf) / (f - pf) : t;
            area += (p - pf) * (pt + tp_at) / 2.0;
            return area / p;
        }
        area += (f - pf) * (pt + t) / 2.0;
        pf = f;
        pt = t;
    }
    return area / p;  // unreachable: the final vertex has FPR = 1 >= p
}

// ---------------------------------------------------------------------------
// Decision metrics (what a gamma-quantile threshold actually changes)
// ---------------------------------------------------------------------------

struct DecisionCounts {
    int tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Counts decisions under the rule "score strictly above threshold is
/// anomalous", the same rule the scorer applies.
inline DecisionCounts count_decisions(const ScoredSet& set, double threshold) {
    set.validate();
    DecisionCounts c;
    for (size_t i = 0; i < set.scores.size(); ++i) {
        const bool flagged = set.scores[i] > threshold;
        if (set.labels[i] == 1)
            flagged ? ++c.tp : ++c.fn;
        else
            flagged ? ++c.fp : ++c.tn;
    }
    return c;
}

inline double precision(const DecisionCounts& c) {
    const int pos = c.tp + c.fp;
    return pos > 0 ? static_cast<double>(c.tp) / pos : 0.0;
}
inline double recall(const DecisionCounts& c) {
    const int actual = c.tp + c.fn;
    return actual > 0 ? static_cast<double>(c.tp) / actual : 0.0;
}
inline double f1_score(const DecisionCounts& c) {
    const double p = precision(c), r = recall(c);
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}
inline double false_positive_rate(const DecisionCounts& c) {
    const int neg = c.fp + c.tn;
    return neg > 0 ? static_cast<double>(c.fp) / neg : 0.0;
}

// ---------------------------------------------------------------------------
// Evaluation reports
// ---------------------------------------------------------------------------

/// One stratum's results: named metric values plus the context they were
/// computed in. AUC/pAUC rows carry {auc, pauc}; threshold-sweep rows carry
/// {precision, recall, f1, fpr}.
struct ReportRow {
    std::string machine;
    std::string section;  // "all" or a section number
    std::string domain;   // "pooled", "source", or "target"
    double band_lo_hz = 0.0;
    double band_hi_hz = 0.0;
    double q = 0.0;
    std::vector<std::pair<std::string, double>> metrics;
    int n_normal = 0;
    int n_anomaly = 0;
};

struct EvalReport {
    std::vector<std::string> notes;  // header comment lines
    std::vector<ReportRow> rows;

    void validate() const {
        for (const auto& row : rows)
            for (const auto& [name, value] : row.metrics) {
                if (!std::isfinite(value))
                    throw InvalidConfig("non-finite value for metric " + name);
                if ((name == "auc" || name == "pauc") && (value < 0.0 || value > 1.0))
                    throw InvalidConfig(name + " outside [0, 1]");
            }
    }
};

enum class ReportFormat { csv, markdown, plotdata };

inline const char* to_string(ReportFormat f) {
    switch (f) {
        case ReportFormat::csv: return "csv";
        case ReportFormat::markdown: return "markdown";
        case ReportFormat::plotdata: return "plotdata";
    }
    return "?";
}

inline ReportFormat report_format_from_string(const std::string& s) {
    if (s == "csv") return ReportFormat::csv;
    if (s == "markdown") return ReportFormat::markdown;
    if (s == "plotdata") return ReportFormat::plotdata;
    throw InvalidConfig("unknown report format: " + s);
}

namespace detail {

// shortest decimal form that parses back to the identical double
inline std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline constexpr const char* kCsvHeader =
    "machine,section,domain,band_lo_hz,band_hi_hz,q,metric,value,n_normal,n_anomaly";

inline std::string band_label(double lo, double hi) {
    return fmt_double(lo) + "-" + fmt_double(hi);
}

inline std::string format_csv(const EvalReport& report) {
    std::string out;
    for (const auto& note : report.notes) out += "# " + note + "\n";
    out += kCsvHeader;
    out += "\n";
    for (const auto& row : report.rows)
        for (const auto& [name, value] : row.metrics) {
            out += row.machine + "," + row.section + "," + row.domain + ",";
            out += fmt_double(row.band_lo_hz) + "," + fmt_double(row.band_hi_hz) + ",";
            out += fmt_double(row.q) + "," + name + "," + fmt_double(value) + ",";
            out += std::to_string(row.n_normal) + "," + std::to_string(row.n_anomaly) + "\n";
        }
    return out;
}

inline std::string format_markdown(const EvalReport& report) {
    std::string out = "# Evaluation report\n\n";
    for (const auto& note : report.notes) out += "_" + note + "_\n\n";

    // column set: metric names in first-appearance order
    std::vector<std::string> names;
    for (const auto& row : report.rows)
        for (const auto& [name, value] : row.metrics)
            if (std::find(names.begin(), names.end(), name) == names.end())
                names.push_back(name);

    const bool table2_shape = names == std::vector<std::string>{"auc", "pauc"};
    char buf[64];
    out += "| machine | section | domain | band (Hz) | q |";
    if (table2_shape) {
        out += " AUC/pAUC |\n|---|---|---|---|---|---|\n";
    } else {
        for (const auto& name : names) out += " " + name + " |";
        out += "\n|---|---|---|---|---|";
        for (size_t i = 0; i < names.size(); ++i) out += "---|";
        out += "\n";
    }
    for (const auto& row : report.rows) {
        out += "| " + row.machine + " | " + row.section + " | " + row.domain + " | " +
               band_label(row.band_lo_hz, row.band_hi_hz) + " | " + fmt_double(row.q) + " |";
        if (table2_shape) {
            // percentages to one decimal, the layout the published table uses
            std::snprintf(buf, sizeof buf, " %.1f/%.1f |", 100.0 * row.metrics[0].second,
                          100.0 * row.metrics[1].second);
            out += buf;
        } else {
            for (const auto& name : names) {
                const auto it = std::find_if(row.metrics.begin(), row.metrics.end(),
                                             [&](const auto& m) { return m.first == name; });
                if (it == row.metrics.end()) {
                    out += "  |";
                } else {
                    std::snprintf(buf, sizeof buf, " %.4f |", it->second);
                    out += buf;
                }
            }
        }
        out += "\n";
    }
    return out;
}

inline std::string format_plotdata(const EvalReport& report) {
    std::string out;
    for (const auto& note : report.notes) out += "# " + note + "\n";
    out += "machine,section,domain,band,q,metric,value\n";
    for (const auto& row : report.rows)
        for (const auto& [name, value] : row.metrics)
            out += row.machine + "," + row.section + "," + row.domain + "," +
                   band_label(row.band_lo_hz, row.band_hi_hz) + "," + fmt_double(row.q) + "," +
                   name + "," + fmt_double(value) + "\n";
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw IoFailure("bad number in report: " + s);
    return v;
}

}  // namespace detail

inline std::string format_report(const EvalReport& report, ReportFormat format) {
    report.validate();
    switch (format) {
        case ReportFormat::csv: return detail::format_csv(report);
        case ReportFormat::markdown: return detail::format_markdown(report);
        case ReportFormat::plotdata: return detail::format_plotdata(report);
    }
    throw InvalidConfig("unknown report format");
}

inline void emit_report(const EvalReport& report, ReportFormat format,
                        const std::filesystem::path& path) {
    const std::string text = format_report(report, format);
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw IoFailure("cannot write " + path.string());
    out << text;
    if (!out) throw IoFailure("short write to " + path.string());
}

/// Re-parses a CSV report; consecutive lines sharing one context collapse
/// back into a single multi-metric row, so emit -> load is lossless.
inline EvalReport load_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open " + path.string());
    EvalReport report;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (header_seen) throw IoFailure("comment after header in " + path.string());
            report.notes.push_back(line.size() > 1 && line[1] == ' ' ? line.substr(2)
                                                                     : line.substr(1));
            continue;
        }
        if (!header_seen) {
            if (line != detail::kCsvHeader)
                throw IoFailure("unrecognized report header in " + path.string());
            header_seen = true;
            continue;
        }
        const auto f = detail::split_csv_line(line);
        if (f.size() != 10) throw IoFailure("malformed report line: " + line);
        ReportRow parsed;
        parsed.machine = f[0];
        parsed.section = f[1];
        parsed.domain = f[2];
        parsed.band_lo_hz = detail::parse_double(f[3]);
        parsed.band_hi_hz = detail::parse_double(f[4]);
        parsed.q = detail::parse_double(f[5]);
        parsed.metrics.emplace_back(f[6], detail::parse_double(f[7]));
        parsed.n_normal = static_cast<int>(detail::parse_double(f[8]));
        parsed.n_anomaly = static_cast<int>(detail::parse_double(f[9]));

        auto same_context = [&](const ReportRow& a, const ReportRow& b) {
            return a.machine == b.machine && a.section == b.section && a.domain == b.domain &&
                   a.band_lo_hz == b.band_lo_hz && a.band_hi_hz == b.band_hi_hz && a.q == b.q &&
                   a.n_normal == b.n_normal && a.n_anomaly == b.n_anomaly;
        };
        if (!report.rows.empty() && same_context(report.rows.back(), parsed))
            report.rows.back().metrics.push_back(parsed.metrics.front());
        else
            report.rows.push_back(std::move(parsed));
    }
    if (!header_seen) throw IoFailure("no report header in " + path.string());
    return report;
}

// ---------------------------------------------------------------------------
// Stratified report assembly
// ---------------------------------------------------------------------------

namespace detail {

template <class Pred>
inline ScoredSet subset(const ScoredSet& set, Pred keep) {
    ScoredSet out;
    for (size_t i = 0; i < set.scores.size(); ++i) {
        if (!keep(set.strata[i])) continue;
        out.scores.push_back(set.scores[i]);
        out.labels.push_back(set.labels[i]);
        out.strata.push_back(set.strata[i]);
    }
    return out;
}

struct StratumView {
    std::string machine;
    std::string section;  // "all" or number
    std::string domain;   // "pooled"/"source"/"target"
    ScoredSet set;
};

// the slices every report covers: per machine, domain-pooled plus source-only
// and target-only (section "all"), then each section individually (pooled)
inline std::vector<StratumView> stratum_views(const ScoredSet& set) {
    std::vector<std::string> machines;
    for (const auto& s : set.strata)
        if (std::find(machines.begin(), machines.end(), s.machine) == machines.end())
            machines.push_back(s.machine);

    std::vector<StratumView> views;
    for (const auto& m : machines) {
        auto of_machine = [&](const Stratum& s) { return s.machine == m; };
        views.push_back({m, "all", "pooled", subset(set, of_machine)});
        views.push_back({m, "all", "source", subset(set, [&](const Stratum& s) {
                             return s.machine == m && s.domain == corpus::Domain::source;
                         })});
        views.push_back({m, "all", "target", subset(set, [&](const Stratum& s) {
                             return s.machine == m && s.domain == corpus::Domain::target;
                         })});
        std::vector<int> sections;
        for (const auto& s : set.strata)
            if (s.machine == m &&
                std::find(sections.begin(), sections.end(), s.section) == sections.end())
                sections.push_back(s.section);
        std::sort(sections.begin(), sections.end());
        for (int sec : sections)
            views.push_back({m, std::to_string(sec), "pooled", subset(set, [&](const Stratum& s) {
                                 return s.machine == m && s.section == sec;
                             })});
    }
    return views;
}

inline void count_labels(const ScoredSet& set, int* n_normal, int* n_anomaly) {
    *n_normal = 0;
    *n_anomaly = 0;
    for (int l : set.labels) (l == 1 ? *n_anomaly : *n_normal)++;
}

}  // namespace detail

/// Computes AUC and pAUC for every stratum view of a scored set. Strata with
/// a single label class are reported through `warnings` and skipped; if every
/// stratum is degenerate the failure is raised as OneClassOnly.
inline EvalReport evaluate_scores(const ScoredSet& set, const dsp::FrequencyBand& band,
                                  double q, double pauc_p = 0.1,
                                  std::vector<std::string>* warnings = nullptr) {
    set.validate();
    if (set.scores.empty()) throw EmptyInput("no scores to evaluate");
    if (set.strata.size() != set.scores.size())
        throw DimensionMismatch("evaluation needs one stratum per score");
    if (!(q > 0.0 && q < 1.0)) throw QOutOfRange("q must be in (0, 1)");
    if (!(pauc_p > 0.0) || pauc_p > 1.0) throw InvalidP("pauc_p must be in (0, 1]");

    EvalReport report;
    report.notes.push_back(
        "rows cover each machine pooled across domains, source-only, target-only, "
        "and each section individually");
    std::vector<std::string> degenerate;
    for (const auto& view : detail::stratum_views(set)) {
        if (view.set.scores.empty()) continue;
        ReportRow row;
        row.machine = view.machine;
        row.section = view.section;
        row.domain = view.domain;
        row.band_lo_hz = band.f_lo;
        row.band_hi_hz = band.f_hi;
        row.q = q;
        detail::count_labels(view.set, &row.n_normal, &row.n_anomaly);
        try {
            row.metrics.emplace_back("auc", auc(view.set));
            row.metrics.emplace_back("pauc", pauc(view.set, pauc_p));
        } catch (const OneClassOnly& e) {
            const std::string msg = "machine=" + view.machine + " section=" + view.section +
                                    " domain=" + view.domain + ": " + e.what();
            degenerate.push_back(msg);
            if (warnings) warnings->push_back(msg);
            continue;
        }
        report.rows.push_back(std::move(row));
    }
    if (report.rows.empty()) {
        std::string joined = "every stratum has one label class";
        for (const auto& d : degenerate) joined += "; " + d;
        throw OneClassOnly(joined);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Threshold sweep
// ---------------------------------------------------------------------------

/// Default quantile grid: 0.85 through 0.95. The published step size (0.1)
/// cannot produce a grid between those endpoints, so 0.01 is used.
inline std::vector<double> default_q_grid() {
    std::vector<double> grid;
    for (int i = 85; i <= 95; ++i) grid.push_back(static_cast<double>(i) / 100.0);
    return grid;
}

/// AUC/pAUC are ranking metrics and provably threshold-free, so a threshold
/// sweep reports what the gamma quantile actually changes: decision-level
/// precision, recall, F1, and false-positive rate per q, per stratum view.
inline EvalReport run_threshold_sweep(const anomaly::ReferenceModel& ref, const ScoredSet& set,
                                      const std::vector<double>& grid,
                                      const dsp::FrequencyBand& band) {
    if (grid.empty()) throw InvalidGrid("empty quantile grid");
    for (double q : grid)
        if (!(q > 0.0 && q < 1.0)) throw InvalidGrid("quantile grid values must be in (0, 1)");
    set.validate();
    if (set.scores.empty()) throw EmptyInput("no scores to sweep");
    if (set.strata.size() != set.scores.size())
        throw DimensionMismatch("threshold sweep needs one stratum per score");
    ref.gamma.validate();

    EvalReport report;
    report.notes.push_back(
        "AUC and pAUC are threshold-free ranking metrics; this sweep reports "
        "decision-level precision/recall/f1/fpr at each gamma-quantile threshold q");
    for (const auto& view : detail::stratum_views(set)) {
        if (view.set.scores.empty()) continue;
        for (double q : grid) {
            const double threshold = anomaly::gamma_quantile(ref.gamma, q);
            const DecisionCounts c = count_decisions(view.set, threshold);
            ReportRow row;
            row.machine = view.machine;
            row.section = view.section;
            row.domain = view.domain;
            row.band_lo_hz = band.f_lo;
            row.band_hi_hz = band.f_hi;
            row.q = q;
            row.n_normal = c.fp + c.tn;
            row.n_anomaly = c.tp + c.fn;
            row.metrics.emplace_back("precision", precision(c));
            row.metrics.emplace_back("recall", recall(c));
            row.metrics.emplace_back("f1", f1_score(c));
            row.metrics.emplace_back("fpr", false_positive_rate(c));
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Band sweep (full pipeline per band)
// ---------------------------------------------------------------------------

/// The nine 3 kHz-wide study bands: 0-3 kHz through 4-7 kHz in 0.5 kHz steps.
inline std::vector<dsp::FrequencyBand> default_band_grid() {
    std::vector<dsp::FrequencyBand> bands;
    for (int i = 0; i < 9; ++i) {
        const double lo = 500.0 * i;
        bands.push_back({lo, lo + 3000.0});
    }
    return bands;
}

/// Everything the per-band pipeline needs besides the band itself. The model
/// width, training schedule, and scoring rule stay fixed across bands so the
/// sweep isolates the band's effect.
struct SweepRecipe {
    net::ModelConfig model;
    net::TrainConfig train;
    anomaly::Metric metric = anomaly::Metric::mahalanobis;
    anomaly::Reducer reducer = anomaly::Reducer::mean;
    net::EmbeddingSource embedding_source = net::EmbeddingSource::softmax;
    bool segmenting = true;
    int sample_rate = 16000;
    double pauc_p = 0.1;
    bool include_pseudo = true;  // add a pseudo/ subtree as one extra class
};

/// Per-clip feature tensors plus self-supervised class labels: one class per
/// section present in the train split, plus one shared class for pseudo
/// (pitch-shifted) clips when any are given.
struct TrainingFeatures {
    std::vector<dsp::MelSpectrogram> specs;
    std::vector<int> labels;
    int n_classes = 0;
};

inline TrainingFeatures load_training_features(const std::vector<corpus::ClipMeta>& train_entries,
                                               const std::vector<corpus::ClipMeta>& pseudo_entries,
                                               const dsp::FrequencyBand& band, bool segmenting,
                                               int sample_rate, int n_mels) {
    if (train_entries.empty()) throw EmptyDataset("no train clips");
    band.validate(sample_rate);

    std::vector<int> sections;
    for (const auto& e : train_entries)
        if (std::find(sections.begin(), sections.end(), e.section) == sections.end())
            sections.push_back(e.section);
    std::sort(sections.begin(), sections.end());

    const dsp::MelFilterbank fb = dsp::build_mel_filterbank(sample_rate, n_mels);
    TrainingFeatures out;
    out.n_classes = static_cast<int>(sections.size()) + (pseudo_entries.empty() ? 0 : 1);

    auto append = [&](const corpus::ClipMeta& entry, int label) {
        corpus::AudioClip clip = corpus::read_wav(entry.path);
        if (clip.sample_rate != sample_rate) clip = corpus::resample_linear(clip, sample_rate);
        if (segmenting) {
            for (const auto& seg : dsp::segment_clip(clip)) {
                out.specs.push_back(dsp::mel_spectrogram(
                    dsp::band_crop(dsp::stft(dsp::segment_to_clip(seg)), band), fb));
                out.labels.push_back(label);
            }
        } else {
            out.specs.push_back(
                dsp::mel_spectrogram(dsp::band_crop(dsp::stft(clip), band), fb));
            out.labels.push_back(label);
        }
    };
    for (const auto& e : train_entries) {
        const auto it = std::find(sections.begin(), sections.end(), e.section);
        append(e, static_cast<int>(it - sections.begin()));
    }
    for (const auto& e : pseudo_entries) append(e, static_cast<int>(sections.size()));
    return out;
}

/// Scores every labeled test clip against a reference: segment embeddings ->
/// distances -> one clip score via the reducer. Unlabeled clips are skipped
/// with a warning since they cannot enter AUC.
inline ScoredSet score_test_clips(net::Model<float>& model,
                                  const std::vector<corpus::ClipMeta>& test_entries,
                                  const dsp::FrequencyBand& band,
                                  const anomaly::ReferenceModel& ref, const SweepRecipe& recipe,
                                  std::vector<std::string>* warnings = nullptr) {
    corpus::Manifest test_manifest;
    test_manifest.entries = test_entries;
    const auto embeddings =
        net::extract_embeddings(model, test_manifest, band, recipe.segmenting,
                                recipe.sample_rate, recipe.embedding_source);

    ScoredSet set;
    size_t next = 0;
    for (const auto& entry : test_entries) {
        std::vector<std::vector<double>> segments;
        while (next < embeddings.size() && embeddings[next].source.path == entry.path) {
            segments.emplace_back(embeddings[next].values.begin(),
                                  embeddings[next].values.end());
            ++next;
        }
        if (entry.label == corpus::Label::unknown) {
            if (warnings)
                warnings->push_back("unlabeled test clip skipped: " + entry.path.string());
            continue;
        }
        set.scores.push_back(anomaly::score_clip(segments, ref, recipe.reducer));
        set.labels.push_back(entry.label == corpus::Label::anomaly ? 1 : 0);
        set.strata.push_back({corpus::to_string(entry.machine), entry.section, entry.domain});
    }
    return set;
}

/// Runs the full pipeline once per band — train the classifier on the band's
/// features, fit a reference on the train embeddings, score the test split —
/// and collects AUC/pAUC rows per stratum. A full-band control row set is
/// always included. On failure, rows finished so far are flushed to
/// `partial_out` (when given) before the error propagates.
inline EvalReport run_band_sweep(const corpus::Manifest& manifest, const SweepRecipe& recipe,
                                 std::vector<dsp::FrequencyBand> bands, double q = 0.9,
                                 const std::filesystem::path& partial_out = {},
                                 std::vector<std::string>* warnings = nullptr) {
    if (!(q > 0.0 && q < 1.0)) throw QOutOfRange("q must be in (0, 1)");
    const auto train_entries = manifest.select(corpus::Split::train);
    const auto test_entries = manifest.select(corpus::Split::test);
    if (train_entries.empty()) throw EmptyDataset("no train clips in manifest");
    if (test_entries.empty()) throw EmptyDataset("no test clips in manifest");

    if (bands.empty()) bands = default_band_grid();
    const double nyquist = recipe.sample_rate / 2.0;
    const bool has_full = std::any_of(bands.begin(), bands.end(), [&](const auto& b) {
        return b.f_lo == 0.0 && b.f_hi >= nyquist;
    });
    if (!has_full) bands.push_back({0.0, nyquist});

    std::vector<corpus::ClipMeta> pseudo_entries;
    if (recipe.include_pseudo)
        pseudo_entries = corpus::scan_pseudo_dir(manifest.root, train_entries.front().machine);

    EvalReport report;
    report.notes.push_back("band sweep at q=" + detail::fmt_double(q) +
                           "; the final band is the full-band control");
    for (const auto& band : bands) {
        try {
            band.validate(recipe.sample_rate);
            const TrainingFeatures features =
                load_training_features(train_entries, pseudo_entries, band, recipe.segmenting,
                                       recipe.sample_rate, recipe.model.input_mels);

            net::ModelConfig mc = recipe.model;
            mc.num_classes = std::max(2, features.n_classes);
            net::Model<float> model = net::build_model<float>(mc, recipe.train.seed);
            net::Adam<float> adam(recipe.train.lr);
            net::TrainConfig tc = recipe.train;
            if (!tc.checkpoint_dir.empty())
                tc.checkpoint_dir /= "band_" + detail::band_label(band.f_lo, band.f_hi);
            net::train(model, adam, features.specs, features.labels, tc);

            corpus::Manifest train_manifest;
            train_manifest.entries = train_entries;
            const auto train_embeddings =
                net::extract_embeddings(model, train_manifest, band, recipe.segmenting,
                                        recipe.sample_rate, recipe.embedding_source);
            std::vector<std::vector<double>> reference_inputs;
            for (const auto& e : train_embeddings)
                reference_inputs.emplace_back(e.values.begin(), e.values.end());
            const anomaly::ReferenceModel ref =
                anomaly::fit_reference(reference_inputs, recipe.metric, warnings);

            const ScoredSet scored =
                score_test_clips(model, test_entries, band, ref, recipe, warnings);
            const EvalReport band_report =
                evaluate_scores(scored, band, q, recipe.pauc_p, warnings);
            report.rows.insert(report.rows.end(), band_report.rows.begin(),
                               band_report.rows.end());
        } catch (const std::exception& e) {
            if (!partial_out.empty()) {
                EvalReport partial = report;
                partial.notes.push_back(std::string("partial: sweep aborted at band ") +
                                        detail::band_label(band.f_lo, band.f_hi) + ": " +
                                        e.what());
                emit_report(partial, ReportFormat::csv, partial_out);
            }
            throw;
        }
    }
    return report;
}

}  // namespace aad::metrics
