#pragma once

// WAV ingestion and the fixed-length windows fed to the detection (5 s) and
// diagnosis (2 s) networks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "coughnet/bytes.hpp"
#include "coughnet/error.hpp"

namespace coughnet {

/// Every clip is brought to this rate before featurization.
inline constexpr int kPipelineRate = 22050;
inline constexpr double kDetectionWindowSeconds = 5.0;
inline constexpr double kDiagnosisWindowSeconds = 2.0;

struct AudioClip {
    std::vector<double> samples; // mono, each in [-1, 1]
    int sample_rate = kPipelineRate;
    std::string source_id;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
    double duration_seconds() const {
        return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
    }
};

namespace detail {

inline constexpr std::uint16_t kFormatPcm = 1;
inline constexpr std::uint16_t kFormatFloat = 3;
inline constexpr std::uint16_t kFormatExtensible = 0xFFFE;

struct WavFormat {
    std::uint16_t format = 0;
    std::uint16_t channels = 0;
    std::uint32_t sample_rate = 0;
    std::uint16_t block_align = 0;
    std::uint16_t bits = 0;
};

inline double decode_sample(const std::uint8_t* p, const WavFormat& fmt) {
    if (fmt.format == kFormatFloat) {
        if (fmt.bits == 32) {
            std::uint32_t bits = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                                 std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
            float v;
            std::memcpy(&v, &bits, 4);
            return static_cast<double>(v);
        }
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) {
            bits |= std::uint64_t(p[i]) << (8 * i);
        }
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    switch (fmt.bits) {
    case 8:
        return (static_cast<double>(p[0]) - 128.0) / 128.0;
    case 16: {
        const auto v = static_cast<std::int16_t>(std::uint16_t(p[0]) | std::uint16_t(p[1]) << 8);
        return static_cast<double>(v) / 32768.0;
    }
    case 24: {
        std::int32_t v = std::int32_t(p[0]) | std::int32_t(p[1]) << 8 | std::int32_t(p[2]) << 16;
        if (v & 0x800000) {
            v -= 0x1000000;
        }
        return static_cast<double>(v) / 8388608.0;
    }
    case 32: {
        const auto v = static_cast<std::int32_t>(std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                                                 std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24);
        return static_cast<double>(v) / 2147483648.0;
    }
    }
    fail(ErrorCode::UnsupportedEncoding, "unsupported PCM bit depth " + std::to_string(fmt.bits));
}

} // namespace detail

/// Decodes a RIFF/WAVE byte buffer into a mono clip (channels averaged).
inline AudioClip decode_wav(std::span<const std::uint8_t> data, std::string source_id = {}) {
    using detail::WavFormat;
    bytes::Reader r(data, ErrorCode::MalformedWav);
    if (r.str(4) != "RIFF") {
        fail(ErrorCode::MalformedWav, source_id + ": missing RIFF tag");
    }
    // Streaming writers often leave the RIFF size wrong; only chunk sizes are trusted.
    if (r.u32() < 4) {
        fail(ErrorCode::MalformedWav, source_id + ": bad RIFF size");
    }
    if (r.str(4) != "WAVE") {
        fail(ErrorCode::MalformedWav, source_id + ": missing WAVE tag");
    }

    WavFormat fmt;
    bool have_fmt = false;
    std::span<const std::uint8_t> payload;
    bool have_data = false;
    while (r.remaining() >= 8 && !(have_fmt && have_data)) {
        const auto id = r.str(4);
        const auto size = r.u32();
        if (size > r.remaining()) {
            fail(ErrorCode::MalformedWav, source_id + ": chunk '" + id + "' overruns file");
        }
        if (id == "fmt ") {
            if (size < 16) {
                fail(ErrorCode::MalformedWav, source_id + ": fmt chunk too small");
            }
            bytes::Reader f(r.span(size), ErrorCode::MalformedWav);
            fmt.format = f.u16();
            fmt.channels = f.u16();
            fmt.sample_rate = f.u32();
            f.u32(); // byte rate
            fmt.block_align = f.u16();
            fmt.bits = f.u16();
            if (fmt.format == detail::kFormatExtensible) {
                if (size < 40) {
                    fail(ErrorCode::MalformedWav, source_id + ": extensible fmt chunk too small");
                }
                f.u16(); // cbSize
                f.u16(); // valid bits
                f.u32(); // channel mask
                fmt.format = f.u16(); // first two bytes of the subformat GUID
            }
            have_fmt = true;
        } else if (id == "data") {
            payload = r.span(size);
            have_data = true;
        } else {
            r.skip(size);
        }
        if (size % 2 == 1 && r.remaining() > 0) {
            r.skip(1);
        }
    }
    if (!have_fmt || !have_data) {
        fail(ErrorCode::MalformedWav, source_id + ": missing fmt or data chunk");
    }
    if (fmt.format != detail::kFormatPcm && fmt.format != detail::kFormatFloat) {
        fail(ErrorCode::UnsupportedEncoding,
             source_id + ": format tag " + std::to_string(fmt.format) + " is not PCM or IEEE float");
    }
    const bool bits_ok = fmt.format == detail::kFormatPcm
                             ? (fmt.bits == 8 || fmt.bits == 16 || fmt.bits == 24 || fmt.bits == 32)
                             : (fmt.bits == 32 || fmt.bits == 64);
    if (!bits_ok) {
        fail(ErrorCode::UnsupportedEncoding, source_id + ": unsupported bit depth " + std::to_string(fmt.bits));
    }
    if (fmt.channels < 1 || fmt.channels > 2) {
        fail(ErrorCode::UnsupportedEncoding, source_id + ": " + std::to_string(fmt.channels) + " channels");
    }
    if (fmt.sample_rate == 0 || fmt.sample_rate > 1'000'000) {
        fail(ErrorCode::MalformedWav, source_id + ": bad sample rate");
    }
    const std::size_t bytes_per_sample = fmt.bits / 8u;
    if (fmt.block_align != bytes_per_sample * fmt.channels) {
        fail(ErrorCode::MalformedWav, source_id + ": block align disagrees with channels and bit depth");
    }
    const std::size_t frames = payload.size() / fmt.block_align;
    if (frames == 0) {
        fail(ErrorCode::EmptyAudio, source_id + ": zero frames");
    }

    AudioClip clip;
    clip.sample_rate = static_cast<int>(fmt.sample_rate);
    clip.source_id = std::move(source_id);
    clip.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        const auto* frame = payload.data() + i * fmt.block_align;
        double sum = 0.0;
        for (std::size_t ch = 0; ch < fmt.channels; ++ch) {
            const double v = detail::decode_sample(frame + ch * bytes_per_sample, fmt);
            if (!std::isfinite(v)) {
                fail(ErrorCode::MalformedWav, clip.source_id + ": non-finite sample");
            }
            sum += v;
        }
        clip.samples[i] = std::clamp(sum / fmt.channels, -1.0, 1.0);
    }
    return clip;
}

inline AudioClip read_wav(const std::filesystem::path& path) {
    const auto data = bytes::read_file(path);
    return decode_wav(data, path.string());
}

/// 16-bit PCM mono encoding at the clip's own rate. Samples are scaled by
/// 32768 and clamped, so decode_wav(encode_wav(x)) is exact for any clip that
/// itself came from 16-bit PCM.
inline std::vector<std::uint8_t> encode_wav(const AudioClip& clip) {
    if (clip.sample_rate <= 0) {
        fail(ErrorCode::InvalidArgument, "sample rate must be positive");
    }
    const auto n = static_cast<std::uint32_t>(clip.samples.size());
    bytes::Writer w;
    w.raw("RIFF");
    w.u32(36 + 2 * n);
    w.raw("WAVE");
    w.raw("fmt ");
    w.u32(16);
    w.u16(detail::kFormatPcm);
    w.u16(1);
    w.u32(static_cast<std::uint32_t>(clip.sample_rate));
    w.u32(static_cast<std::uint32_t>(clip.sample_rate) * 2);
    w.u16(2);
    w.u16(16);
    w.raw("data");
    w.u32(2 * n);
    for (double s : clip.samples) {
        const double scaled = std::nearbyint(std::clamp(s, -1.0, 1.0) * 32768.0);
        const auto q = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
        w.u16(static_cast<std::uint16_t>(q));
    }
    return w.take();
}

inline void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
    bytes::write_file(path, encode_wav(clip));
}

/// Linear-interpolation resampler. Output length is round(n * target / source).
inline AudioClip resample(const AudioClip& clip, int target_rate) {
    if (target_rate <= 0) {
        fail(ErrorCode::InvalidArgument, "target rate must be positive");
    }
    if (clip.empty()) {
        fail(ErrorCode::EmptyAudio, clip.source_id + ": cannot resample empty clip");
    }
    if (clip.sample_rate == target_rate) {
        return clip;
    }
    const double ratio = static_cast<double>(clip.sample_rate) / target_rate;
    const auto out_len = static_cast<std::size_t>(
        std::llround(static_cast<double>(clip.size()) * target_rate / clip.sample_rate));
    AudioClip out;
    out.sample_rate = target_rate;
    out.source_id = clip.source_id;
    out.samples.resize(out_len);
    const std::size_t last = clip.size() - 1;
    for (std::size_t i = 0; i < out_len; ++i) {
        const double x = static_cast<double>(i) * ratio;
        const auto i0 = std::min(static_cast<std::size_t>(x), last);
        const auto i1 = std::min(i0 + 1, last);
        const double frac = x - static_cast<double>(i0);
        const double a = clip.samples[i0];
        const double b = clip.samples[i1];
        out.samples[i] = i0 == i1 ? a : a + (b - a) * frac;
    }
    return out;
}

/// Resamples to the pipeline rate, then truncates or zero-pads at the end to
/// exactly `seconds`.
inline AudioClip fit_window(const AudioClip& clip, double seconds) {
    if (clip.empty()) {
        fail(ErrorCode::EmptyAudio, clip.source_id + ": empty clip");
    }
    AudioClip out = resample(clip, kPipelineRate);
    const auto target = static_cast<std::size_t>(std::llround(seconds * kPipelineRate));
    out.samples.resize(target, 0.0);
    return out;
}

inline AudioClip fit_detection_window(const AudioClip& clip) {
    return fit_window(clip, kDetectionWindowSeconds);
}

inline AudioClip fit_diagnosis_window(const AudioClip& clip) {
    return fit_window(clip, kDiagnosisWindowSeconds);
}

/// read_wav followed by resampling to the pipeline rate.
inline AudioClip load_clip(const std::filesystem::path& path) {
    return resample(read_wav(path), kPipelineRate);
}

} // namespace coughnet
