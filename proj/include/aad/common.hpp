#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace aad {

// Error taxonomy. The three bases map onto the CLI exit codes
// (config -> 2, data -> 3, numeric -> 4).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
public:
    using Error::Error;
};
class DataError : public Error {
public:
    using Error::Error;
};
class NumericError : public Error {
public:
    using Error::Error;
};

#define AAD_DEFINE_ERROR(NAME, BASE)                                          \
    class NAME : public BASE {                                                \
    public:                                                                   \
        explicit NAME(const std::string& msg) : BASE(#NAME ": " + msg) {}     \
    }

// corpus
AAD_DEFINE_ERROR(MalformedWav, DataError);
AAD_DEFINE_ERROR(UnsupportedEncoding, DataError);
AAD_DEFINE_ERROR(EmptyDataset, DataError);
AAD_DEFINE_ERROR(AmbiguousFilename, DataError);
AAD_DEFINE_ERROR(InvalidConfig, ConfigError);
AAD_DEFINE_ERROR(IoFailure, DataError);
// dsp
AAD_DEFINE_ERROR(ClipTooShort, DataError);
AAD_DEFINE_ERROR(InvalidBand, ConfigError);
AAD_DEFINE_ERROR(ShapeMismatch, DataError);
// augment
AAD_DEFINE_ERROR(ShiftOutOfRange, ConfigError);
AAD_DEFINE_ERROR(SpecTooSmall, DataError);
AAD_DEFINE_ERROR(BatchTooSmall, DataError);
// net
AAD_DEFINE_ERROR(InputTooSmall, DataError);
AAD_DEFINE_ERROR(NonFiniteActivation, NumericError);
AAD_DEFINE_ERROR(DivergedLoss, NumericError);
AAD_DEFINE_ERROR(CorruptCheckpoint, DataError);
// anomaly
AAD_DEFINE_ERROR(DimensionMismatch, DataError);
AAD_DEFINE_ERROR(SingularCovariance, NumericError);
AAD_DEFINE_ERROR(TooFewEmbeddings, DataError);
AAD_DEFINE_ERROR(DegenerateSample, DataError);
AAD_DEFINE_ERROR(TooFewSamples, DataError);
AAD_DEFINE_ERROR(QOutOfRange, ConfigError);
AAD_DEFINE_ERROR(EmptyInput, DataError);
// metrics
AAD_DEFINE_ERROR(OneClassOnly, DataError);
AAD_DEFINE_ERROR(InvalidP, ConfigError);
AAD_DEFINE_ERROR(InvalidGrid, ConfigError);

#undef AAD_DEFINE_ERROR

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seeded generator handed through every randomized operation. Substreams
// derived with derive() are statistically independent, which keeps
// per-batch and per-clip randomness reproducible regardless of ordering.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(splitmix64(seed)) {}

    Rng derive(uint64_t stream) const {
        return Rng(splitmix64(seed_mix_ ^ splitmix64(stream + 0x1234abcdULL)));
    }

    uint64_t next_u64() { return engine_(); }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    // in [0, n)
    size_t uniform_index(size_t n) {
        return std::uniform_int_distribution<size_t>(0, n - 1)(engine_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    double gamma(double shape, double scale) {
        return std::gamma_distribution<double>(shape, scale)(engine_);
    }
    double beta(double a, double b) {
        const double x = gamma(a, 1.0);
        const double y = gamma(b, 1.0);
        return x / (x + y);
    }
    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        std::shuffle(v.begin(), v.end(), engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    explicit Rng(std::mt19937_64 eng) : engine_(eng) {}

    std::mt19937_64 engine_;
    uint64_t seed_mix_ = engine_();
};

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

inline uint64_t hash_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path.string());
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
    return h;
}

template <typename It>
bool all_finite(It begin, It end) {
    for (It it = begin; it != end; ++it)
        if (!std::isfinite(static_cast<double>(*it))) return false;
    return true;
}

}  // namespace aad
