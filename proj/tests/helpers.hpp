#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "aad/audio.hpp"
#include "aad/dsp.hpp"
#include "aad/fft.hpp"

namespace testutil {

// Unique scratch directory, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("aad_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

inline aad::corpus::AudioClip tone_clip(double freq_hz, double duration_s, int sample_rate,
                                        double amp = 0.5, double phase = 0.0) {
    aad::corpus::AudioClip clip;
    clip.sample_rate = sample_rate;
    const size_t n = static_cast<size_t>(std::llround(duration_s * sample_rate));
    clip.samples.resize(n);
    const double w = 2.0 * M_PI * freq_hz / sample_rate;
    for (size_t i = 0; i < n; ++i)
        clip.samples[i] = static_cast<float>(amp * std::sin(w * i + phase));
    return clip;
}

// Argmax bin of the frame-averaged 2048-point Hann magnitude spectrum.
inline int dominant_bin(const aad::corpus::AudioClip& clip, int n_fft = 2048) {
    const aad::dsp::Spectrogram spec = aad::dsp::stft(clip, n_fft, n_fft / 2);
    int best = 0;
    double best_mag = -1.0;
    for (int k = 0; k < spec.n_bins(); ++k) {
        double acc = 0.0;
        for (int t = 0; t < spec.n_frames; ++t) acc += spec.at(k, t);
        if (acc > best_mag) {
            best_mag = acc;
            best = k;
        }
    }
    return best;
}

inline int dominant_bin_in_band(const aad::corpus::AudioClip& clip, double f_lo, double f_hi,
                                int n_fft = 2048) {
    const aad::dsp::Spectrogram spec = aad::dsp::stft(clip, n_fft, n_fft / 2);
    const double bin_hz = static_cast<double>(clip.sample_rate) / n_fft;
    int best = 0;
    double best_mag = -1.0;
    for (int k = 0; k < spec.n_bins(); ++k) {
        const double f = k * bin_hz;
        if (f < f_lo || f > f_hi) continue;
        double acc = 0.0;
        for (int t = 0; t < spec.n_frames; ++t) acc += spec.at(k, t);
        if (acc > best_mag) {
            best_mag = acc;
            best = k;
        }
    }
    return best;
}

// Spectral energy of the clip restricted to [f_lo, f_hi], via the STFT grid.
inline double band_energy(const aad::corpus::AudioClip& clip, double f_lo, double f_hi) {
    const aad::dsp::Spectrogram spec = aad::dsp::stft(clip);
    const double bin_hz = static_cast<double>(clip.sample_rate) / spec.n_fft;
    double acc = 0.0;
    for (int k = 0; k < spec.n_bins(); ++k) {
        const double f = k * bin_hz;
        if (f < f_lo || f > f_hi) continue;
        for (int t = 0; t < spec.n_frames; ++t)
            acc += static_cast<double>(spec.at(k, t)) * spec.at(k, t);
    }
    return acc;
}

inline double rms_diff(const std::vector<float>& a, const std::vector<float>& b) {
    const size_t n = std::min(a.size(), b.size());
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return std::sqrt(acc / n);
}

inline double rms(const std::vector<float>& a) {
    double acc = 0.0;
    for (const float v : a) acc += static_cast<double>(v) * v;
    return std::sqrt(acc / a.size());
}

}  // namespace testutil
