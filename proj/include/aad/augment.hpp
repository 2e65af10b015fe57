#pragma once
// Pseudo-audio synthesis (pitch shifting) and online batch augmentation
// (SpecAugment-style masking, Mixup).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "aad/common.hpp"
#include "aad/dsp.hpp"
#include "aad/fft.hpp"

namespace aad::augment {

struct AugmentConfig {
    std::vector<double> pitch_semitones{-2.0, 2.0};
    int specaug_time_width = 10;
    int specaug_freq_width = 10;
    double mixup_beta_alpha = 0.4;
    double mixup_uniform_prob = 0.5;  // chance of drawing lambda from Uniform(0,1)

    void validate() const {
        if (specaug_time_width < 1 || specaug_freq_width < 1)
            throw InvalidConfig("spec-augment mask widths must be >= 1");
        if (!(mixup_beta_alpha > 0.0))
            throw InvalidConfig("mixup beta alpha must be > 0");
        if (mixup_uniform_prob < 0.0 || mixup_uniform_prob > 1.0)
            throw InvalidConfig("mixup uniform probability must lie in [0,1]");
        for (const double s : pitch_semitones)
            if (std::abs(s) > 12.0)
                throw ShiftOutOfRange("pitch shift of " + std::to_string(s) +
                                      " semitones exceeds +/-12");
    }
};

struct LabeledBatch {
    std::vector<dsp::MelSpectrogram> specs;
    std::vector<std::vector<float>> labels;

    void validate() const {
        if (specs.size() != labels.size())
            throw ShapeMismatch("batch has " + std::to_string(specs.size()) + " specs but " +
                                std::to_string(labels.size()) + " labels");
        for (size_t i = 0; i < specs.size(); ++i) {
            if (specs[i].n_mels != specs[0].n_mels || specs[i].n_frames != specs[0].n_frames)
                throw ShapeMismatch("batch spectrogram shapes differ");
            if (labels[i].size() != labels[0].size())
                throw ShapeMismatch("batch label lengths differ");
            double sum = 0.0;
            for (const float p : labels[i]) {
                if (p < 0.0f) throw ShapeMismatch("label probabilities must be non-negative");
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-6)
                throw ShapeMismatch("label probabilities must sum to 1");
        }
    }
};

namespace detail {

// Evaluate x at fractional positions i*ratio with a Hann-windowed sinc kernel,
// low-passed when compressing so the shifted content does not alias.
inline std::vector<float> sinc_resample(const std::vector<float>& x, double ratio) {
    const int taps = 32;
    const double cutoff = std::min(1.0, 1.0 / ratio);
    const size_t out_len = static_cast<size_t>(std::floor(
        static_cast<double>(x.size() - 1) / ratio)) + 1;
    std::vector<float> out(out_len);
    const long n = static_cast<long>(x.size());
    for (size_t i = 0; i < out_len; ++i) {
        const double pos = static_cast<double>(i) * ratio;
        const long base = static_cast<long>(std::floor(pos));
        const double frac = pos - static_cast<double>(base);
        double acc = 0.0;
        for (long j = -taps + 1; j <= taps; ++j) {
            const long src = base + j;
            if (src < 0 || src >= n) continue;
            const double t = static_cast<double>(j) - frac;
            const double window = 0.5 + 0.5 * std::cos(M_PI * t / taps);
            double kernel;
            if (std::abs(t) < 1e-12)
                kernel = cutoff;
            else
                kernel = cutoff * std::sin(M_PI * cutoff * t) / (M_PI * cutoff * t);
            acc += static_cast<double>(x[src]) * kernel * window;
        }
        out[i] = static_cast<float>(acc);
    }
    return out;
}

inline double princarg(double phase) {
    return phase - 2.0 * M_PI * std::floor((phase + M_PI) / (2.0 * M_PI));
}

// Phase-vocoder time stretch: output plays the same content over
// round(x.size()*ratio) samples without moving it in frequency. Frame 0 is an
// identity frame (synthesis phase = analysis phase), anchoring the output to
// the input's absolute phase; once the analysis window crosses the signal end
// the per-bin frequency estimates are frozen so the reflected tail padding
// cannot corrupt phase propagation.
inline std::vector<float> time_stretch(const std::vector<float>& x, double ratio) {
    constexpr int kN = 2048;
    constexpr int kHs = 256;
    const long n = static_cast<long>(x.size());
    const long out_len = std::lround(static_cast<double>(n) * ratio);
    if (out_len <= 0) return {};
    if (n < kN) {  // too short for block processing: nearest-sample rescale
        std::vector<float> out(static_cast<size_t>(out_len));
        for (long i = 0; i < out_len; ++i) {
            const long src = std::min<long>(n - 1, std::lround(i / ratio));
            out[static_cast<size_t>(i)] = x[static_cast<size_t>(src)];
        }
        return out;
    }

    const double hop_a = static_cast<double>(kHs) / ratio;
    const long n_frames = (out_len - 1) / kHs + 1;
    const long need = std::lround(static_cast<double>(n_frames - 1) * hop_a) + kN;
    std::vector<float> padded(static_cast<size_t>(need));
    for (long j = 0; j < need; ++j) {
        long src = j;
        if (src >= n) src = 2 * n - 2 - src;  // reflect at the right edge
        src = std::clamp<long>(src, 0, n - 1);
        padded[static_cast<size_t>(j)] = x[static_cast<size_t>(src)];
    }

    std::vector<double> window(kN);
    for (int i = 0; i < kN; ++i) window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / kN);

    const size_t synth_len = static_cast<size_t>((n_frames - 1) * kHs + kN);
    std::vector<double> acc(synth_len, 0.0), norm(synth_len, 0.0);

    std::vector<std::complex<double>> frame(kN);
    std::vector<double> prev_phase(kN / 2 + 1, 0.0), synth_phase(kN / 2 + 1, 0.0);
    std::vector<double> inst_freq(kN / 2 + 1, 0.0), clean_mag(kN / 2 + 1, 0.0);
    for (int k = 0; k <= kN / 2; ++k) inst_freq[k] = 2.0 * M_PI * k / kN;
    long prev_start = 0;
    bool prev_clean = false;

    for (long m = 0; m < n_frames; ++m) {
        const long start = std::lround(static_cast<double>(m) * hop_a);
        const bool clean = start + kN <= n;
        for (int i = 0; i < kN; ++i)
            frame[i] = {padded[static_cast<size_t>(start + i)] * window[i], 0.0};
        dsp::fft_inplace(frame);

        const long delta = start - prev_start;
        for (int k = 0; k <= kN / 2; ++k) {
            const double mag = clean ? std::abs(frame[k]) : clean_mag[k];
            const double phase = std::arg(frame[k]);
            if (clean) clean_mag[k] = mag;
            if (m == 0) {
                synth_phase[k] = phase;
            } else {
                if (clean && prev_clean && delta > 0) {
                    const double omega = 2.0 * M_PI * k / kN;
                    inst_freq[k] = omega +
                                   princarg(phase - prev_phase[k] - delta * omega) / delta;
                }
                synth_phase[k] = princarg(synth_phase[k] + kHs * inst_freq[k]);
            }
            prev_phase[k] = phase;
            frame[k] = std::polar(mag, synth_phase[k]);
        }
        for (int k = 1; k < kN / 2; ++k) frame[kN - k] = std::conj(frame[k]);

        dsp::fft_inplace(frame, true);
        const size_t base = static_cast<size_t>(m) * kHs;
        for (int i = 0; i < kN; ++i) {
            acc[base + i] += frame[i].real() * window[i];
            norm[base + i] += window[i] * window[i];
        }
        prev_start = start;
        prev_clean = clean;
    }

    std::vector<float> out(static_cast<size_t>(out_len), 0.0f);
    for (long i = 0; i < out_len; ++i) {
        const size_t j = static_cast<size_t>(i);
        if (j < synth_len && norm[j] > 1e-13)
            out[static_cast<size_t>(i)] = static_cast<float>(acc[j] / norm[j]);
    }
    return out;
}

}  // namespace detail

// Scale all spectral content by 2^(semitones/12) without changing duration:
// sinc-resample by the ratio, then phase-vocoder stretch back to the input length.
inline corpus::AudioClip pitch_shift(const corpus::AudioClip& clip, double semitones) {
    if (std::abs(semitones) > 12.0)
        throw ShiftOutOfRange("pitch shift of " + std::to_string(semitones) +
                              " semitones exceeds +/-12");
    if (semitones == 0.0 || clip.samples.size() < 2) return clip;

    const double factor = std::pow(2.0, semitones / 12.0);
    const std::vector<float> resampled = detail::sinc_resample(clip.samples, factor);
    std::vector<float> stretched = detail::time_stretch(
        resampled, static_cast<double>(clip.samples.size()) / resampled.size());
    stretched.resize(clip.samples.size(), 0.0f);

    corpus::AudioClip out;
    out.sample_rate = clip.sample_rate;
    out.samples = std::move(stretched);
    return out;
}

// Deterministic core: mask time_width frames starting at t0 (all mel rows) and
// freq_width mel rows starting at m0 (all frames) down to the log floor.
inline dsp::MelSpectrogram spec_augment_at(const dsp::MelSpectrogram& spec, int t0, int m0,
                                           int time_width, int freq_width) {
    if (spec.n_frames <= time_width || spec.n_mels <= freq_width)
        throw SpecTooSmall("spectrogram " + std::to_string(spec.n_mels) + "x" +
                           std::to_string(spec.n_frames) +
                           " too small for mask widths " + std::to_string(freq_width) + "/" +
                           std::to_string(time_width));
    if (t0 < 0 || t0 + time_width > spec.n_frames || m0 < 0 || m0 + freq_width > spec.n_mels)
        throw ShapeMismatch("mask block out of range");

    dsp::MelSpectrogram out = spec;
    const float floor = dsp::MelSpectrogram::floor_value();
    for (int m = 0; m < out.n_mels; ++m)
        for (int t = t0; t < t0 + time_width; ++t)
            out.values[static_cast<size_t>(m) * out.n_frames + t] = floor;
    for (int m = m0; m < m0 + freq_width; ++m)
        for (int t = 0; t < out.n_frames; ++t)
            out.values[static_cast<size_t>(m) * out.n_frames + t] = floor;
    return out;
}

inline dsp::MelSpectrogram spec_augment(const dsp::MelSpectrogram& spec, Rng& rng,
                                        const AugmentConfig& cfg = {}) {
    const int tw = cfg.specaug_time_width;
    const int fw = cfg.specaug_freq_width;
    if (spec.n_frames <= tw || spec.n_mels <= fw)
        throw SpecTooSmall("spectrogram " + std::to_string(spec.n_mels) + "x" +
                           std::to_string(spec.n_frames) +
                           " too small for mask widths " + std::to_string(fw) + "/" +
                           std::to_string(tw));
    const int t0 = static_cast<int>(rng.uniform_index(
        static_cast<size_t>(spec.n_frames - tw + 1)));
    const int m0 = static_cast<int>(rng.uniform_index(
        static_cast<size_t>(spec.n_mels - fw + 1)));
    return spec_augment_at(spec, t0, m0, tw, fw);
}

// out = lambda*a + (1-lambda)*b, cellwise.
inline dsp::MelSpectrogram mixup_pair(const dsp::MelSpectrogram& a,
                                      const dsp::MelSpectrogram& b, double lambda) {
    if (a.n_mels != b.n_mels || a.n_frames != b.n_frames)
        throw ShapeMismatch("mixup operands have different shapes");
    dsp::MelSpectrogram out = a;
    const float lam = static_cast<float>(lambda);
    for (size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = lam * a.values[i] + (1.0f - lam) * b.values[i];
    return out;
}

inline std::vector<float> mixup_labels(const std::vector<float>& a,
                                       const std::vector<float>& b, double lambda) {
    if (a.size() != b.size()) throw ShapeMismatch("mixup labels have different lengths");
    std::vector<float> out(a.size());
    const float lam = static_cast<float>(lambda);
    for (size_t i = 0; i < out.size(); ++i) out[i] = lam * a[i] + (1.0f - lam) * b[i];
    return out;
}

// Pair every element with a random-permutation partner and blend each pair with
// its own lambda, drawn from Uniform(0,1) or Beta(alpha, alpha) by a coin flip.
inline LabeledBatch mixup(const LabeledBatch& batch, Rng& rng, const AugmentConfig& cfg = {}) {
    if (batch.specs.size() < 2)
        throw BatchTooSmall("mixup needs at least 2 elements, got " +
                            std::to_string(batch.specs.size()));
    batch.validate();

    std::vector<size_t> perm(batch.specs.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);

    LabeledBatch out;
    out.specs.reserve(batch.specs.size());
    out.labels.reserve(batch.labels.size());
    for (size_t i = 0; i < batch.specs.size(); ++i) {
        const double lambda = rng.bernoulli(cfg.mixup_uniform_prob)
                                  ? rng.uniform()
                                  : rng.beta(cfg.mixup_beta_alpha, cfg.mixup_beta_alpha);
        out.specs.push_back(mixup_pair(batch.specs[i], batch.specs[perm[i]], lambda));
        out.labels.push_back(mixup_labels(batch.labels[i], batch.labels[perm[i]], lambda));
    }
    return out;
}

}  // namespace aad::augment
