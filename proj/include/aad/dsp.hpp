#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "aad/audio.hpp"
#include "aad/common.hpp"
#include "aad/fft.hpp"

namespace aad::dsp {

inline constexpr int kNFft = 2048;
inline constexpr int kHop = 1024;
inline constexpr int kNMels = 128;
inline constexpr float kLogEps = 1e-6f;

struct FrequencyBand {
    double f_lo = 0.0;
    double f_hi = 0.0;

    void validate(int sample_rate) const {
        if (!(f_lo >= 0.0 && f_lo < f_hi && f_hi <= sample_rate / 2.0))
            throw InvalidBand("band [" + std::to_string(f_lo) + ", " + std::to_string(f_hi) +
                              "] invalid for rate " + std::to_string(sample_rate));
    }
    bool operator==(const FrequencyBand&) const = default;
};

inline FrequencyBand full_band(int sample_rate) { return {0.0, sample_rate / 2.0}; }

/// Magnitude STFT grid, bins x frames, row-major.
struct Spectrogram {
    int n_fft = kNFft;
    int hop = kHop;
    int sample_rate = 0;
    int n_frames = 0;
    std::vector<float> mags;  // [n_bins() * n_frames]

    int n_bins() const { return n_fft / 2 + 1; }
    float& at(int bin, int frame) { return mags[static_cast<size_t>(bin) * n_frames + frame]; }
    float at(int bin, int frame) const {
        return mags[static_cast<size_t>(bin) * n_frames + frame];
    }
};

/// Log-compressed Mel grid, 128 x frames, row-major.
struct MelSpectrogram {
    int n_mels = kNMels;
    int n_frames = 0;
    std::vector<float> values;  // [n_mels * n_frames]
    std::optional<FrequencyBand> band;

    float& at(int mel, int frame) { return values[static_cast<size_t>(mel) * n_frames + frame]; }
    float at(int mel, int frame) const {
        return values[static_cast<size_t>(mel) * n_frames + frame];
    }
    static float floor_value() { return std::log(kLogEps); }
};

/// Hann-windowed magnitude STFT. Frames lie fully inside the signal, so
/// n_frames = floor((len - n_fft)/hop) + 1.
inline Spectrogram stft(const corpus::AudioClip& clip, int n_fft = kNFft, int hop = kHop) {
    if (static_cast<int>(clip.samples.size()) < n_fft)
        throw ClipTooShort("need at least " + std::to_string(n_fft) + " samples, got " +
                           std::to_string(clip.samples.size()));
    Spectrogram spec;
    spec.n_fft = n_fft;
    spec.hop = hop;
    spec.sample_rate = clip.sample_rate;
    spec.n_frames = static_cast<int>((clip.samples.size() - n_fft) / hop) + 1;
    spec.mags.assign(static_cast<size_t>(spec.n_bins()) * spec.n_frames, 0.0f);

    std::vector<float> window(n_fft);
    for (int i = 0; i < n_fft; ++i)
        window[i] = static_cast<float>(0.5 - 0.5 * std::cos(2.0 * M_PI * i / n_fft));

    std::vector<std::complex<float>> frame(n_fft);
    for (int t = 0; t < spec.n_frames; ++t) {
        const float* x = clip.samples.data() + static_cast<size_t>(t) * hop;
        for (int i = 0; i < n_fft; ++i) frame[i] = std::complex<float>(x[i] * window[i], 0.0f);
        fft_inplace(frame);
        for (int k = 0; k <= n_fft / 2; ++k) spec.at(k, t) = std::abs(frame[k]);
    }
    return spec;
}

/// Zeroes every STFT bin whose center frequency k*sr/n_fft falls outside
/// [f_lo, f_hi]. In-band bins are copied bit-identically.
inline Spectrogram band_crop(const Spectrogram& spec, const FrequencyBand& band) {
    band.validate(spec.sample_rate);
    const double bin_hz = static_cast<double>(spec.sample_rate) / spec.n_fft;
    const int k_lo = static_cast<int>(std::ceil(band.f_lo / bin_hz - 1e-9));
    const int k_hi = std::min(spec.n_bins() - 1,
                              static_cast<int>(std::floor(band.f_hi / bin_hz + 1e-9)));
    Spectrogram out = spec;
    for (int k = 0; k < spec.n_bins(); ++k) {
        if (k >= k_lo && k <= k_hi) continue;
        std::fill_n(out.mags.begin() + static_cast<size_t>(k) * out.n_frames, out.n_frames, 0.0f);
    }
    return out;
}

// Slaney mel scale: linear below 1 kHz, logarithmic above.
inline double hz_to_mel(double hz) {
    constexpr double kBreak = 1000.0;
    constexpr double kLinStep = 200.0 / 3.0;
    if (hz < kBreak) return hz / kLinStep;
    const double log_step = std::log(6.4) / 27.0;
    return kBreak / kLinStep + std::log(hz / kBreak) / log_step;
}
inline double mel_to_hz(double mel) {
    constexpr double kBreak = 1000.0;
    constexpr double kLinStep = 200.0 / 3.0;
    const double break_mel = kBreak / kLinStep;
    if (mel < break_mel) return mel * kLinStep;
    const double log_step = std::log(6.4) / 27.0;
    return kBreak * std::exp(log_step * (mel - break_mel));
}

struct MelFilterbank {
    int n_mels = kNMels;
    int n_bins = kNFft / 2 + 1;
    int sample_rate = 0;
    std::vector<float> weights;  // [n_mels * n_bins]
    std::vector<double> center_freqs;
    std::vector<int> row_begin, row_end;  // nonzero column span per row

    float weight(int mel, int bin) const {
        return weights[static_cast<size_t>(mel) * n_bins + bin];
    }
};

/// 128 triangular filters, mel-spaced over [0, Nyquist], unit area after
/// Slaney normalization. Weights are the average of the continuous triangle
/// over each bin cell rather than point samples; that keeps every bin in
/// (0, Nyquist) covered and makes all row integrals agree to rounding error.
inline MelFilterbank build_mel_filterbank(int sample_rate, int n_mels = kNMels,
                                          int n_fft = kNFft) {
    if (sample_rate <= 0) throw InvalidConfig("sample rate must be positive");
    MelFilterbank fb;
    fb.n_mels = n_mels;
    fb.n_bins = n_fft / 2 + 1;
    fb.sample_rate = sample_rate;
    fb.weights.assign(static_cast<size_t>(n_mels) * fb.n_bins, 0.0f);
    fb.center_freqs.resize(n_mels);
    fb.row_begin.assign(n_mels, 0);
    fb.row_end.assign(n_mels, 0);

    const double nyquist = sample_rate / 2.0;
    const double mel_max = hz_to_mel(nyquist);
    std::vector<double> edges(n_mels + 2);
    for (int i = 0; i < n_mels + 2; ++i)
        edges[i] = mel_to_hz(mel_max * i / (n_mels + 1));

    const double bin_hz = static_cast<double>(sample_rate) / n_fft;
    for (int m = 0; m < n_mels; ++m) {
        const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
        fb.center_freqs[m] = center;
        const double norm = 2.0 / (right - left);  // unit triangle area

        // integral of the normalized triangle over [a, b]
        auto tri = [&](double f) {
            if (f <= left || f >= right) return 0.0;
            return norm * (f < center ? (f - left) / (center - left)
                                      : (right - f) / (right - center));
        };
        auto segment_integral = [&](double a, double b) {
            double total = 0.0;
            const double pieces[3][2] = {{left, center}, {center, right}, {0, 0}};
            for (int s = 0; s < 2; ++s) {
                const double lo = std::max(a, pieces[s][0]);
                const double hi = std::min(b, pieces[s][1]);
                if (hi > lo) total += 0.5 * (tri(lo) + tri(hi)) * (hi - lo);
            }
            return total;
        };

        const int k_first = std::max(0, static_cast<int>(std::floor(left / bin_hz - 0.5)));
        const int k_last =
            std::min(fb.n_bins - 1, static_cast<int>(std::ceil(right / bin_hz + 0.5)));
        int begin = -1, end = -1;
        for (int k = k_first; k <= k_last; ++k) {
            const double cell_lo = std::max(0.0, (k - 0.5) * bin_hz);
            const double cell_hi = std::min(nyquist, (k + 0.5) * bin_hz);
            const double w = segment_integral(cell_lo, cell_hi) / bin_hz;
            if (w > 0.0) {
                fb.weights[static_cast<size_t>(m) * fb.n_bins + k] = static_cast<float>(w);
                if (begin < 0) begin = k;
                end = k + 1;
            }
        }
        fb.row_begin[m] = std::max(0, begin);
        fb.row_end[m] = std::max(0, end);
    }
    return fb;
}

/// values = log(filterbank * mags + eps).
inline MelSpectrogram mel_spectrogram(const Spectrogram& spec, const MelFilterbank& fb) {
    if (fb.n_bins != spec.n_bins() || fb.sample_rate != spec.sample_rate)
        throw ShapeMismatch("filterbank built for different spectrogram geometry");
    MelSpectrogram mel;
    mel.n_mels = fb.n_mels;
    mel.n_frames = spec.n_frames;
    mel.values.resize(static_cast<size_t>(fb.n_mels) * spec.n_frames);
    for (int m = 0; m < fb.n_mels; ++m) {
        const float* wrow = fb.weights.data() + static_cast<size_t>(m) * fb.n_bins;
        for (int t = 0; t < spec.n_frames; ++t) {
            double acc = 0.0;
            for (int k = fb.row_begin[m]; k < fb.row_end[m]; ++k)
                acc += static_cast<double>(wrow[k]) * spec.at(k, t);
            mel.at(m, t) = static_cast<float>(std::log(acc + kLogEps));
        }
    }
    return mel;
}

/// Splits a clip into fixed 2.5 s segments with 50% overlap (1.25 s hop).
/// The trailing remainder shorter than one hop is dropped.
struct Segment {
    std::vector<float> samples;
    int sample_rate = 0;
    long start_sample = 0;
};

inline std::vector<Segment> segment_clip(const corpus::AudioClip& clip,
                                         double segment_s = 2.5, double overlap = 0.5) {
    const size_t seg_len = static_cast<size_t>(std::llround(segment_s * clip.sample_rate));
    const size_t hop = static_cast<size_t>(std::llround(segment_s * (1.0 - overlap) *
                                                        clip.sample_rate));
    if (clip.samples.size() < seg_len)
        throw ClipTooShort("clip shorter than one segment (" + std::to_string(segment_s) + " s)");
    const size_t count = (clip.samples.size() - seg_len) / hop + 1;
    std::vector<Segment> out;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        Segment seg;
        seg.sample_rate = clip.sample_rate;
        seg.start_sample = static_cast<long>(i * hop);
        seg.samples.assign(clip.samples.begin() + static_cast<long>(i * hop),
                           clip.samples.begin() + static_cast<long>(i * hop + seg_len));
        out.push_back(std::move(seg));
    }
    return out;
}

inline corpus::AudioClip segment_to_clip(const Segment& seg) {
    corpus::AudioClip clip;
    clip.sample_rate = seg.sample_rate;
    clip.samples = seg.samples;
    return clip;
}

// ---------------------------------------------------------------------------
// Cache file: {magic "AADS", version u32, n_rows u32, n_cols u32,
// sample_rate u32} followed by row-major little-endian float32.
// ---------------------------------------------------------------------------

inline void save_grid(const std::filesystem::path& path, const float* data, uint32_t n_rows,
                      uint32_t n_cols, uint32_t sample_rate) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + path.string());
    const uint32_t version = 1;
    out.write("AADS", 4);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&n_rows), 4);
    out.write(reinterpret_cast<const char*>(&n_cols), 4);
    out.write(reinterpret_cast<const char*>(&sample_rate), 4);
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(sizeof(float) * n_rows * n_cols));
    if (!out) throw IoFailure("short write to " + path.string());
}

struct GridFile {
    uint32_t n_rows = 0, n_cols = 0, sample_rate = 0;
    std::vector<float> data;
};

inline GridFile load_grid(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path.string());
    char magic[4];
    uint32_t version = 0;
    GridFile g;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&g.n_rows), 4);
    in.read(reinterpret_cast<char*>(&g.n_cols), 4);
    in.read(reinterpret_cast<char*>(&g.sample_rate), 4);
    if (!in || std::memcmp(magic, "AADS", 4) != 0 || version != 1)
        throw MalformedWav("bad spectrogram cache header: " + path.string());
    g.data.resize(static_cast<size_t>(g.n_rows) * g.n_cols);
    in.read(reinterpret_cast<char*>(g.data.data()),
            static_cast<std::streamsize>(sizeof(float) * g.data.size()));
    if (!in) throw MalformedWav("truncated spectrogram cache: " + path.string());
    return g;
}

inline void save_mel(const std::filesystem::path& path, const MelSpectrogram& mel,
                     uint32_t sample_rate) {
    save_grid(path, mel.values.data(), static_cast<uint32_t>(mel.n_mels),
              static_cast<uint32_t>(mel.n_frames), sample_rate);
}

inline MelSpectrogram load_mel(const std::filesystem::path& path) {
    GridFile g = load_grid(path);
    MelSpectrogram mel;
    mel.n_mels = static_cast<int>(g.n_rows);
    mel.n_frames = static_cast<int>(g.n_cols);
    mel.values = std::move(g.data);
    return mel;
}

}  // namespace aad::dsp
