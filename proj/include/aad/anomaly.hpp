#pragma once
// Scoring against a fitted "normal" profile: the mean (and covariance) of the
// train embeddings, squared-Euclidean or Mahalanobis distances to it, and a
// Gamma distribution over the train distances whose quantiles serve as
// decision thresholds.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "aad/common.hpp"
#include "aad/corpus.hpp"

namespace aad::anomaly {

struct GammaParams {
    double shape = 1.0;  // k
    double scale = 1.0;  // theta

    void validate() const {
        if (!(std::isfinite(shape) && shape > 0.0 && std::isfinite(scale) && scale > 0.0))
            throw InvalidConfig("gamma parameters must be finite and positive");
    }
};

enum class Metric { euclidean, mahalanobis };
enum class Reducer { mean, max };

inline std::string to_string(Metric m) {
    return m == Metric::euclidean ? "euclidean" : "mahalanobis";
}
inline Metric metric_from_string(const std::string& s) {
    if (s == "euclidean") return Metric::euclidean;
    if (s == "mahalanobis") return Metric::mahalanobis;
    throw InvalidConfig("unknown metric '" + s + "'");
}
inline std::string to_string(Reducer r) { return r == Reducer::mean ? "mean" : "max"; }
inline Reducer reducer_from_string(const std::string& s) {
    if (s == "mean") return Reducer::mean;
    if (s == "max") return Reducer::max;
    throw InvalidConfig("unknown reducer '" + s + "'");
}

struct ReferenceModel {
    Metric metric = Metric::euclidean;
    std::vector<double> mean;     // d
    std::vector<double> cov;      // d x d row-major, sample covariance
    std::vector<double> inv_cov;  // inverse of (cov + epsilon*I)
    double epsilon = 0.0;
    GammaParams gamma;
    std::string provenance;

    int dim() const { return static_cast<int>(mean.size()); }
};

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

// psi(x) by recurrence into the asymptotic region
inline double digamma(double x) {
    if (!(x > 0.0)) throw InvalidConfig("digamma defined here for x > 0 only");
    double acc = 0.0;
    while (x < 12.0) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x, inv2 = inv * inv;
    return acc + std::log(x) - 0.5 * inv -
           inv2 * (1.0 / 12 -
                   inv2 * (1.0 / 120 -
                           inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 / 132))));
}

// psi'(x), same scheme
inline double trigamma(double x) {
    if (!(x > 0.0)) throw InvalidConfig("trigamma defined here for x > 0 only");
    double acc = 0.0;
    while (x < 12.0) {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    const double inv = 1.0 / x, inv2 = inv * inv;
    return acc +
           inv * (1.0 +
                  inv * (0.5 +
                         inv * (1.0 / 6 -
                                inv2 * (1.0 / 30 -
                                        inv2 * (1.0 / 42 -
                                                inv2 * (1.0 / 30 - inv2 * 5.0 / 66))))));
}

namespace detail {

// regularized lower incomplete gamma P(a, x): series for x < a+1, otherwise
// the continued fraction for Q via modified Lentz
inline double gamma_p(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw InvalidConfig("gamma_p needs a > 0, x >= 0");
    if (x == 0.0) return 0.0;
    const double lg = std::lgamma(a);
    if (x < a + 1.0) {
        double term = 1.0 / a, sum = term, ap = a;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if (std::abs(term) < std::abs(sum) * 1e-16) break;
        }
        return sum * std::exp(-x + a * std::log(x) - lg);
    }
    constexpr double kTiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / kTiny, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < kTiny) d = kTiny;
        c = b + an / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return 1.0 - std::exp(-x + a * std::log(x) - lg) * h;
}

}  // namespace detail

inline double gamma_cdf(const GammaParams& params, double x) {
    params.validate();
    if (x <= 0.0) return 0.0;
    return detail::gamma_p(params.shape, x / params.scale);
}

// Inverse CDF by bracketed bisection on the regularized incomplete gamma,
// polished to an interval below 1e-10 relative.
inline double gamma_quantile(const GammaParams& params, double q) {
    params.validate();
    if (!(q > 0.0 && q < 1.0))
        throw QOutOfRange("quantile level must lie in (0, 1), got " + std::to_string(q));
    const double a = params.shape;
    double hi = std::max(1.0, a + 10.0 * std::sqrt(a));
    while (detail::gamma_p(a, hi) < q) hi *= 2.0;
    double lo = 0.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (detail::gamma_p(a, mid) < q ? lo : hi) = mid;
        if (hi - lo <= 1e-12 * std::max(1.0, hi)) break;
    }
    return 0.5 * (lo + hi) * params.scale;
}

// MLE: Newton on ln(k) - psi(k) = s with s = ln(mean) - mean(ln), started from
// the closed-form approximation; method of moments if Newton stalls. Values at
// or below 1e-12 are clamped there (they break the log; reported via warnings).
inline GammaParams fit_gamma(const std::vector<double>& distances,
                             std::vector<std::string>* warnings = nullptr) {
    if (distances.size() < 10)
        throw TooFewSamples("gamma fit needs at least 10 values, got " +
                            std::to_string(distances.size()));
    const double n = static_cast<double>(distances.size());
    double sum = 0.0, log_sum = 0.0, clamped = 0;
    for (double v : distances) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw InvalidConfig("distances must be finite and non-negative");
        if (v < 1e-12) {
            v = 1e-12;
            ++clamped;
        }
        sum += v;
        log_sum += std::log(v);
    }
    if (clamped > 0 && warnings)
        warnings->push_back("gamma fit: clamped " + std::to_string(int(clamped)) +
                            " near-zero distances to 1e-12");
    const double mean = sum / n;
    double var = 0.0;
    for (const double v : distances) var += (v - mean) * (v - mean);
    var /= n;
    if (var <= 0.0 || mean <= 0.0)
        throw DegenerateSample("distance sample has zero variance");

    const double s = std::log(mean) - log_sum / n;
    if (!(s > 0.0)) throw DegenerateSample("log-moment gap is not positive");

    double k = (3.0 - s + std::sqrt((s - 3.0) * (s - 3.0) + 24.0 * s)) / (12.0 * s);
    bool converged = false;
    for (int i = 0; i < 50; ++i) {
        const double f = std::log(k) - digamma(k) - s;
        const double fp = 1.0 / k - trigamma(k);
        const double next = k - f / fp;
        if (!(next > 0.0) || !std::isfinite(next)) break;
        const bool done = std::abs(next - k) <= 1e-10 * k;
        k = next;
        if (done) {
            converged = true;
            break;
        }
    }
    GammaParams params;
    if (converged) {
        params.shape = k;
        params.scale = mean / k;
    } else {
        if (warnings) warnings->push_back("gamma fit: Newton stalled, using moments");
        params.shape = mean * mean / var;
        params.scale = var / mean;
    }
    params.validate();
    return params;
}

// ---------------------------------------------------------------------------
// Distances
// ---------------------------------------------------------------------------

// squared 2-norm, exactly as the train-distance variable is defined
inline double euclidean_distance(const std::vector<double>& x,
                                 const std::vector<double>& m) {
    if (x.size() != m.size())
        throw DimensionMismatch("vector sizes " + std::to_string(x.size()) + " vs " +
                                std::to_string(m.size()));
    double acc = 0.0;
    for (size_t i = 0; i < x.size(); ++i) acc += (x[i] - m[i]) * (x[i] - m[i]);
    return acc;
}

inline double mahalanobis_distance(const std::vector<double>& x,
                                   const ReferenceModel& ref) {
    const size_t d = ref.mean.size();
    if (x.size() != d)
        throw DimensionMismatch("embedding dim " + std::to_string(x.size()) +
                                " vs reference dim " + std::to_string(d));
    if (ref.inv_cov.size() != d * d)
        throw DimensionMismatch("reference holds no usable inverse covariance");
    Eigen::VectorXd v(static_cast<Eigen::Index>(d));
    for (size_t i = 0; i < d; ++i) v[static_cast<Eigen::Index>(i)] = x[i] - ref.mean[i];
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                         Eigen::RowMajor>>
        inv(ref.inv_cov.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    const double sq = v.dot(inv * v);
    if (sq < -1e-9) throw SingularCovariance("inverse covariance is not positive definite");
    return std::sqrt(std::max(0.0, sq));
}

inline double distance(const std::vector<double>& x, const ReferenceModel& ref) {
    return ref.metric == Metric::euclidean ? euclidean_distance(x, ref.mean)
                                           : mahalanobis_distance(x, ref);
}

// ---------------------------------------------------------------------------
// Reference fitting
// ---------------------------------------------------------------------------

// Sample mean and (n-1)-covariance of the train embeddings, the inverse of
// S + eps*I with eps = epsilon_scale * trace(S)/d, and a Gamma fit over the
// train distances under `metric`. epsilon_scale 1e-3 by default; softmax
// embeddings live on a simplex, so S alone is rank deficient by construction.
inline ReferenceModel fit_reference(const std::vector<std::vector<double>>& embeddings,
                                    Metric metric,
                                    std::vector<std::string>* warnings = nullptr,
                                    double epsilon_scale = 1e-3) {
    const size_t n = embeddings.size();
    if (n < 2)
        throw TooFewEmbeddings("reference fit needs at least 2 embeddings, got " +
                               std::to_string(n));
    const size_t d = embeddings[0].size();
    if (d == 0) throw DimensionMismatch("embeddings must be non-empty vectors");
    for (const auto& e : embeddings)
        if (e.size() != d) throw DimensionMismatch("embeddings differ in dimension");
    if (metric == Metric::mahalanobis && n < d + 1 && warnings)
        warnings->push_back("covariance fit from " + std::to_string(n) +
                            " embeddings of dim " + std::to_string(d) +
                            " is rank deficient");

    ReferenceModel ref;
    ref.metric = metric;
    ref.mean.assign(d, 0.0);
    for (const auto& e : embeddings)
        for (size_t i = 0; i < d; ++i) ref.mean[i] += e[i];
    for (auto& v : ref.mean) v /= static_cast<double>(n);

    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d),
                                              static_cast<Eigen::Index>(d));
    Eigen::VectorXd diff(static_cast<Eigen::Index>(d));
    for (const auto& e : embeddings) {
        for (size_t i = 0; i < d; ++i)
            diff[static_cast<Eigen::Index>(i)] = e[i] - ref.mean[i];
        S.noalias() += diff * diff.transpose();
    }
    S /= static_cast<double>(n - 1);

    ref.epsilon = epsilon_scale * S.trace() / static_cast<double>(d);
    const Eigen::MatrixXd regularized =
        S + ref.epsilon * Eigen::MatrixXd::Identity(S.rows(), S.cols());
    const Eigen::LLT<Eigen::MatrixXd> llt(regularized);
    if (llt.info() != Eigen::Success)
        throw SingularCovariance("covariance is singular even after regularization");
    const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(S.rows(), S.cols()));

    ref.cov.resize(d * d);
    ref.inv_cov.resize(d * d);
    for (size_t r = 0; r < d; ++r)
        for (size_t c = 0; c < d; ++c) {
            ref.cov[r * d + c] = S(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
            ref.inv_cov[r * d + c] =
                inv(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        }

    std::vector<double> distances;
    distances.reserve(n);
    for (const auto& e : embeddings) distances.push_back(distance(e, ref));
    try {
        ref.gamma = fit_gamma(distances, warnings);
    } catch (const TooFewSamples& e) {
        // a usable mean/covariance with too few points for a threshold model:
        // keep unit-Gamma defaults rather than failing the whole fit
        if (warnings) warnings->push_back(std::string("no gamma fit: ") + e.what());
    } catch (const DegenerateSample& e) {
        if (warnings) warnings->push_back(std::string("no gamma fit: ") + e.what());
    }
    ref.provenance = "fit over " + std::to_string(n) + " embeddings, metric " +
                     to_string(metric);
    return ref;
}

// ---------------------------------------------------------------------------
// Scoring and decisions
// ---------------------------------------------------------------------------

inline double score_clip(const std::vector<std::vector<double>>& segment_embeddings,
                         const ReferenceModel& ref, Reducer reducer = Reducer::mean) {
    if (segment_embeddings.empty()) throw EmptyInput("clip has no segment embeddings");
    double acc = reducer == Reducer::mean ? 0.0 : -1.0;
    for (const auto& e : segment_embeddings) {
        const double dist = distance(e, ref);
        if (reducer == Reducer::mean)
            acc += dist;
        else
            acc = std::max(acc, dist);
    }
    if (reducer == Reducer::mean) acc /= static_cast<double>(segment_embeddings.size());
    return acc;
}

struct AnomalyScore {
    corpus::ClipMeta clip;
    double score = 0.0;
    corpus::Label decision = corpus::Label::normal;
    double threshold_used = 0.0;
};

// anomaly iff score strictly exceeds the Gamma q-quantile of train distances
inline AnomalyScore decide(double score, const ReferenceModel& ref, double q) {
    AnomalyScore out;
    out.score = score;
    out.threshold_used = gamma_quantile(ref.gamma, q);
    out.decision =
        score > out.threshold_used ? corpus::Label::anomaly : corpus::Label::normal;
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline void save_reference(const std::filesystem::path& path, const ReferenceModel& ref) {
    const size_t d = ref.mean.size();
    nlohmann::json cov = nlohmann::json::array();
    for (size_t r = 0; r < d; ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (size_t c = 0; c < d; ++c) row.push_back(ref.cov[r * d + c]);
        cov.push_back(std::move(row));
    }
    const nlohmann::json j = {{"metric", to_string(ref.metric)},
                              {"mean", ref.mean},
                              {"covariance", cov},
                              {"epsilon", ref.epsilon},
                              {"gamma", {{"shape", ref.gamma.shape}, {"scale", ref.gamma.scale}}},
                              {"embedding_dim", d},
                              {"provenance", ref.provenance}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline ReferenceModel load_reference(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        ReferenceModel ref;
        ref.metric = metric_from_string(j.at("metric").get<std::string>());
        ref.mean = j.at("mean").get<std::vector<double>>();
        const size_t d = ref.mean.size();
        if (j.at("embedding_dim").get<size_t>() != d)
            throw InvalidConfig("embedding_dim disagrees with the mean vector");
        ref.epsilon = j.at("epsilon").get<double>();
        ref.gamma.shape = j.at("gamma").at("shape").get<double>();
        ref.gamma.scale = j.at("gamma").at("scale").get<double>();
        ref.provenance = j.value("provenance", std::string{});
        ref.cov.assign(d * d, 0.0);
        const auto& cov = j.at("covariance");
        if (cov.size() != d) throw InvalidConfig("covariance rows disagree with dim");
        for (size_t r = 0; r < d; ++r) {
            if (cov[r].size() != d) throw InvalidConfig("covariance is not square");
            for (size_t c = 0; c < d; ++c) ref.cov[r * d + c] = cov[r][c].get<double>();
        }
        ref.gamma.validate();
        // rebuild the inverse from the stored covariance and epsilon
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                       Eigen::RowMajor>>
            S(ref.cov.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        const Eigen::MatrixXd regularized =
            S + ref.epsilon * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d),
                                                        static_cast<Eigen::Index>(d));
        const Eigen::LLT<Eigen::MatrixXd> llt(regularized);
        if (llt.info() != Eigen::Success)
            throw SingularCovariance("stored covariance is not positive definite");
        const Eigen::MatrixXd inv =
            llt.solve(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d),
                                                static_cast<Eigen::Index>(d)));
        ref.inv_cov.assign(d * d, 0.0);
        for (size_t r = 0; r < d; ++r)
            for (size_t c = 0; c < d; ++c)
                ref.inv_cov[r * d + c] =
                    inv(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        return ref;
    } catch (const nlohmann::json::exception& e) {
        throw IoFailure("bad reference file " + path.string() + ": " + e.what());
    }
}

struct EmbeddingRow {
    std::string clip_path;
    int segment_index = 0;
    std::vector<double> values;
};

inline void save_embeddings_csv(const std::filesystem::path& path,
                                const std::vector<EmbeddingRow>& rows) {
    if (rows.empty()) throw EmptyInput("no embeddings to write");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + path.string());
    const size_t d = rows[0].values.size();
    out << "clip_path,segment_index";
    for (size_t i = 0; i < d; ++i) out << ",e" << i;
    out << '\n';
    out.precision(17);
    for (const auto& row : rows) {
        if (row.values.size() != d)
            throw DimensionMismatch("embedding rows differ in dimension");
        out << row.clip_path << ',' << row.segment_index;
        for (const double v : row.values) out << ',' << v;
        out << '\n';
    }
}

inline std::vector<EmbeddingRow> load_embeddings_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("clip_path,segment_index", 0) != 0)
        throw IoFailure("missing embeddings header in " + path.string());
    size_t d = 0;
    for (size_t pos = 0; (pos = line.find(",e", pos)) != std::string::npos; ++pos) ++d;
    std::vector<EmbeddingRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        EmbeddingRow row;
        std::string field;
        if (!std::getline(ss, row.clip_path, ',') || !std::getline(ss, field, ','))
            throw IoFailure("short embeddings row in " + path.string());
        row.segment_index = std::stoi(field);
        while (std::getline(ss, field, ',')) row.values.push_back(std::stod(field));
        if (row.values.size() != d)
            throw DimensionMismatch("embeddings row width " +
                                    std::to_string(row.values.size()) + " != header " +
                                    std::to_string(d));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw EmptyInput("no embedding rows in " + path.string());
    return rows;
}

}  // namespace aad::anomaly
