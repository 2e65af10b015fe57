#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "aad/common.hpp"

namespace aad::corpus {

/// A mono audio signal. Samples live in [-1, 1].
struct AudioClip {
    std::vector<float> samples;
    int sample_rate = 0;

    double duration_s() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

namespace detail {

inline uint32_t read_u32le(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint16_t read_u16le(const unsigned char* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32le(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}
inline void put_u16le(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline std::vector<unsigned char> read_all_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

}  // namespace detail

/// Reads a RIFF/WAVE file. PCM 16-bit and IEEE float 32-bit are accepted;
/// multi-channel audio is averaged down to mono.
inline AudioClip read_wav(const std::filesystem::path& path) {
    using namespace detail;
    const std::vector<unsigned char> bytes = read_all_bytes(path);
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw MalformedWav("not a RIFF/WAVE file: " + path.string());

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t sample_rate = 0;
    bool have_fmt = false;
    size_t data_off = 0, data_len = 0;

    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
        const uint32_t len = read_u32le(bytes.data() + pos + 4);
        const size_t body = pos + 8;
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (body + 16 > bytes.size()) throw MalformedWav("truncated fmt chunk");
            format = read_u16le(bytes.data() + body);
            channels = read_u16le(bytes.data() + body + 2);
            sample_rate = read_u32le(bytes.data() + body + 4);
            bits = read_u16le(bytes.data() + body + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data_off = body;
            data_len = len;
            if (body + len > bytes.size())
                throw MalformedWav("truncated data chunk in " + path.string());
        }
        pos = body + len + (len & 1);  // chunks are word-aligned
    }
    if (!have_fmt || data_off == 0) throw MalformedWav("missing fmt/data chunk");
    if (channels == 0 || sample_rate == 0) throw MalformedWav("bad fmt fields");

    const bool pcm16 = (format == 1 && bits == 16);
    const bool f32 = (format == 3 && bits == 32);
    if (!pcm16 && !f32)
        throw UnsupportedEncoding("only PCM16 and float32 WAV are supported (format=" +
                                  std::to_string(format) + ", bits=" + std::to_string(bits) + ")");

    const size_t bytes_per_sample = bits / 8;
    const size_t frame_size = bytes_per_sample * channels;
    if (data_len % frame_size != 0) throw MalformedWav("data chunk not frame-aligned");
    const size_t n_frames = data_len / frame_size;
    if (n_frames == 0) throw MalformedWav("empty data chunk");

    AudioClip clip;
    clip.sample_rate = static_cast<int>(sample_rate);
    clip.samples.resize(n_frames);
    const unsigned char* d = bytes.data() + data_off;
    for (size_t i = 0; i < n_frames; ++i) {
        double acc = 0.0;
        for (uint16_t c = 0; c < channels; ++c) {
            const unsigned char* s = d + i * frame_size + c * bytes_per_sample;
            if (pcm16) {
                const int16_t v = static_cast<int16_t>(read_u16le(s));
                acc += v / 32768.0;
            } else {
                float v;
                std::memcpy(&v, s, 4);
                acc += v;
            }
        }
        const double mono = acc / channels;
        if (!std::isfinite(mono)) throw MalformedWav("non-finite sample in " + path.string());
        clip.samples[i] = static_cast<float>(std::clamp(mono, -1.0, 1.0));
    }
    return clip;
}

/// Writes a mono 16-bit PCM WAV. Round-trips through read_wav within one LSB.
inline void write_wav_pcm16(const std::filesystem::path& path, const AudioClip& clip) {
    if (clip.samples.empty() || clip.sample_rate <= 0)
        throw InvalidConfig("cannot write empty clip");
    std::string out;
    const uint32_t n = static_cast<uint32_t>(clip.samples.size());
    const uint32_t data_len = n * 2;
    out.reserve(44 + data_len);
    out += "RIFF";
    detail::put_u32le(out, 36 + data_len);
    out += "WAVEfmt ";
    detail::put_u32le(out, 16);
    detail::put_u16le(out, 1);  // PCM
    detail::put_u16le(out, 1);  // mono
    detail::put_u32le(out, static_cast<uint32_t>(clip.sample_rate));
    detail::put_u32le(out, static_cast<uint32_t>(clip.sample_rate) * 2);
    detail::put_u16le(out, 2);
    detail::put_u16le(out, 16);
    out += "data";
    detail::put_u32le(out, data_len);
    for (uint32_t i = 0; i < n; ++i) {
        const long q = std::lround(static_cast<double>(clip.samples[i]) * 32768.0);
        const int16_t v = static_cast<int16_t>(std::clamp<long>(q, -32768, 32767));
        detail::put_u16le(out, static_cast<uint16_t>(v));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoFailure("cannot write " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoFailure("short write to " + path.string());
}

/// Writes a mono IEEE float32 WAV (used by tests for the float read path).
inline void write_wav_float32(const std::filesystem::path& path, const AudioClip& clip) {
    if (clip.samples.empty() || clip.sample_rate <= 0)
        throw InvalidConfig("cannot write empty clip");
    std::string out;
    const uint32_t n = static_cast<uint32_t>(clip.samples.size());
    const uint32_t data_len = n * 4;
    out.reserve(44 + data_len);
    out += "RIFF";
    detail::put_u32le(out, 36 + data_len);
    out += "WAVEfmt ";
    detail::put_u32le(out, 16);
    detail::put_u16le(out, 3);  // IEEE float
    detail::put_u16le(out, 1);
    detail::put_u32le(out, static_cast<uint32_t>(clip.sample_rate));
    detail::put_u32le(out, static_cast<uint32_t>(clip.sample_rate) * 4);
    detail::put_u16le(out, 4);
    detail::put_u16le(out, 32);
    out += "data";
    detail::put_u32le(out, data_len);
    for (uint32_t i = 0; i < n; ++i) {
        char b[4];
        std::memcpy(b, &clip.samples[i], 4);
        out.append(b, 4);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoFailure("cannot write " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoFailure("short write to " + path.string());
}

/// Linear-interpolation resampler used when ingesting files whose rate
/// differs from the pipeline rate.
inline AudioClip resample_linear(const AudioClip& clip, int target_rate) {
    if (target_rate <= 0) throw InvalidConfig("target rate must be positive");
    if (clip.sample_rate == target_rate) return clip;
    const double ratio = static_cast<double>(clip.sample_rate) / target_rate;
    const size_t out_len =
        static_cast<size_t>(std::floor((clip.samples.size() - 1) / ratio)) + 1;
    AudioClip out;
    out.sample_rate = target_rate;
    out.samples.resize(out_len);
    for (size_t i = 0; i < out_len; ++i) {
        const double pos = i * ratio;
        const size_t i0 = static_cast<size_t>(pos);
        const size_t i1 = std::min(i0 + 1, clip.samples.size() - 1);
        const double frac = pos - i0;
        out.samples[i] = static_cast<float>((1.0 - frac) * clip.samples[i0] +
                                            frac * clip.samples[i1]);
    }
    return out;
}

}  // namespace aad::corpus
