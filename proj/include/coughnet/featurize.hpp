#pragma once

// Mel-spectrogram images: STFT power -> triangular mel filterbank -> relative
// dB -> grayscale intensity, bilinearly resized to the model input size.

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "coughnet/audio_io.hpp"
#include "coughnet/bytes.hpp"
#include "coughnet/error.hpp"

namespace coughnet {

struct FeatureProfile {
    int frame_size = 1024;
    int hop = 512;
    int n_mels = 128;
    double f_min = 0.0;
    double f_max = kPipelineRate / 2.0;
    double db_floor = -80.0;
    int image_h = 288;
    int image_w = 432;

    static FeatureProfile paper() { return {}; }

    /// Reduced resolution used for tests and desktop-scale training.
    static FeatureProfile desk() {
        FeatureProfile p;
        p.n_mels = 40;
        p.image_h = 64;
        p.image_w = 96;
        return p;
    }

    int n_bins() const { return frame_size / 2 + 1; }

    void validate(int rate = kPipelineRate) const {
        auto bad = [](const std::string& what) { fail(ErrorCode::InvalidProfile, what); };
        if (frame_size < 2) bad("frame_size must be >= 2");
        if (hop <= 0 || hop > frame_size) bad("hop must be in (0, frame_size]");
        if (n_mels < 2) bad("n_mels must be >= 2");
        if (!(f_min >= 0.0) || !(f_min < f_max)) bad("need 0 <= f_min < f_max");
        if (f_max > rate / 2.0) bad("f_max exceeds Nyquist");
        if (!(db_floor < 0.0)) bad("db_floor must be negative");
        if (image_h <= 0 || image_w <= 0) bad("image dimensions must be positive");
    }

    /// Canonical key=value text; also the custom-profile file format.
    std::string to_text() const {
        std::ostringstream os;
        os.precision(17);
        os << "frame_size=" << frame_size << "\nhop=" << hop << "\nn_mels=" << n_mels
           << "\nf_min=" << f_min << "\nf_max=" << f_max << "\ndb_floor=" << db_floor
           << "\nimage_h=" << image_h << "\nimage_w=" << image_w << "\n";
        return os.str();
    }

    static FeatureProfile from_text(const std::string& text) {
        FeatureProfile p;
        std::istringstream is(text);
        std::string line;
        int line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            if (const auto hash = line.find('#'); hash != std::string::npos) {
                line.erase(hash);
            }
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) {
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                fail(ErrorCode::ParseError, "profile line " + std::to_string(line_no) + ": expected key=value");
            }
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
            };
            const auto key = trim(line.substr(0, eq));
            const auto value = trim(line.substr(eq + 1));
            try {
                if (key == "frame_size") p.frame_size = std::stoi(value);
                else if (key == "hop") p.hop = std::stoi(value);
                else if (key == "n_mels") p.n_mels = std::stoi(value);
                else if (key == "f_min") p.f_min = std::stod(value);
                else if (key == "f_max") p.f_max = std::stod(value);
                else if (key == "db_floor") p.db_floor = std::stod(value);
                else if (key == "image_h") p.image_h = std::stoi(value);
                else if (key == "image_w") p.image_w = std::stoi(value);
                else fail(ErrorCode::ParseError, "profile line " + std::to_string(line_no) + ": unknown key '" + key + "'");
            } catch (const std::logic_error&) {
                fail(ErrorCode::ParseError, "profile line " + std::to_string(line_no) + ": bad value '" + value + "'");
            }
        }
        return p;
    }

    std::uint32_t hash() const { return bytes::crc32(to_text()); }

    bool operator==(const FeatureProfile&) const = default;
};

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct SpectrogramImage {
    int height = 0;
    int width = 0;
    std::vector<float> pixels; // row-major; row 0 is the highest frequency
    FeatureProfile profile;

    float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }
};

inline double hz_to_mel(double hz) {
    if (hz < 0.0) {
        fail(ErrorCode::NegativeFrequency, "frequency " + std::to_string(hz) + " Hz is negative");
    }
    return 2595.0 * std::log10(1.0 + hz / 700.0);
}

inline double mel_to_hz(double mel) {
    return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

namespace detail {

/// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) {
            j ^= bit;
        }
        j ^= bit;
        if (i < j) {
            std::swap(a[i], a[j]);
        }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

/// |X[k]|^2 for k in [0, n/2] of a real frame.
inline void power_spectrum(const std::vector<double>& frame, std::vector<std::complex<double>>& scratch,
                           double* out) {
    const std::size_t n = frame.size();
    const std::size_t bins = n / 2 + 1;
    if (std::has_single_bit(n)) {
        scratch.assign(frame.begin(), frame.end());
        fft_radix2(scratch);
        for (std::size_t k = 0; k < bins; ++k) {
            out[k] = std::norm(scratch[k]);
        }
        return;
    }
    for (std::size_t k = 0; k < bins; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
            acc += frame[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = std::norm(acc);
    }
}

inline std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    }
    return w;
}

} // namespace detail

/// Power spectrogram, frames x (frame_size/2 + 1). Periodic Hann window, no
/// padding: frames = floor((n - frame_size) / hop) + 1.
inline Matrix stft_power(const AudioClip& clip, const FeatureProfile& profile) {
    const auto n = clip.samples.size();
    const auto frame = static_cast<std::size_t>(profile.frame_size);
    const auto hop = static_cast<std::size_t>(profile.hop);
    if (frame == 0 || hop == 0) {
        fail(ErrorCode::InvalidProfile, "frame_size and hop must be positive");
    }
    if (n < frame) {
        fail(ErrorCode::ClipTooShort, clip.source_id + ": " + std::to_string(n) + " samples < frame size " +
                                          std::to_string(frame));
    }
    const std::size_t frames = (n - frame) / hop + 1;
    const auto bins = static_cast<std::size_t>(profile.n_bins());
    const auto window = detail::hann_window(frame);
    Matrix out(frames, bins);
    std::vector<double> buf(frame);
    std::vector<std::complex<double>> scratch;
    for (std::size_t t = 0; t < frames; ++t) {
        const double* src = clip.samples.data() + t * hop;
        for (std::size_t i = 0; i < frame; ++i) {
            buf[i] = src[i] * window[i];
        }
        detail::power_spectrum(buf, scratch, &out.values[t * bins]);
    }
    return out;
}

/// Triangular filters, n_mels x (frame_size/2 + 1), peaks uniformly spaced in
/// mel between f_min and f_max, unit peak height, no area normalization.
inline Matrix mel_filterbank(const FeatureProfile& profile, int rate = kPipelineRate) {
    profile.validate(rate);
    const auto n_mels = static_cast<std::size_t>(profile.n_mels);
    const auto bins = static_cast<std::size_t>(profile.n_bins());
    const double mel_lo = hz_to_mel(profile.f_min);
    const double mel_hi = hz_to_mel(profile.f_max);
    std::vector<double> edges(n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
    }
    Matrix fb(n_mels, bins);
    for (std::size_t m = 0; m < n_mels; ++m) {
        const double lo = edges[m];
        const double center = edges[m + 1];
        const double hi = edges[m + 2];
        bool any = false;
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * rate / profile.frame_size;
            const double w = std::max(0.0, std::min((f - lo) / (center - lo), (hi - f) / (hi - center)));
            fb(m, k) = w;
            any = any || w > 0.0;
        }
        if (!any) {
            fail(ErrorCode::InvalidProfile, "mel filter " + std::to_string(m) +
                                                " covers no FFT bin; reduce n_mels or enlarge frame_size");
        }
    }
    return fb;
}

/// filterbank (n_mels x bins) times power^T (bins x frames) -> n_mels x frames.
inline Matrix apply_filterbank(const Matrix& filterbank, const Matrix& power) {
    if (filterbank.cols != power.cols) {
        fail(ErrorCode::DimensionMismatch, "filterbank has " + std::to_string(filterbank.cols) +
                                               " bins, spectrogram has " + std::to_string(power.cols));
    }
    Matrix out(filterbank.rows, power.rows);
    for (std::size_t m = 0; m < filterbank.rows; ++m) {
        const double* f = &filterbank.values[m * filterbank.cols];
        for (std::size_t t = 0; t < power.rows; ++t) {
            const double* p = &power.values[t * power.cols];
            double acc = 0.0;
            for (std::size_t k = 0; k < power.cols; ++k) {
                acc += f[k] * p[k];
            }
            out(m, t) = acc;
        }
    }
    return out;
}

inline constexpr double kPowerEpsilon = 1e-10;

/// Decibels relative to the matrix maximum, clamped to [db_floor, 0]. A matrix
/// whose maximum is at or below the epsilon (silence) maps to db_floor.
inline Matrix power_to_db(const Matrix& power, double db_floor = -80.0) {
    Matrix out(power.rows, power.cols);
    double peak = kPowerEpsilon;
    for (double p : power.values) {
        if (p < 0.0 || !std::isfinite(p)) {
            fail(ErrorCode::InvalidArgument, "power values must be finite and non-negative");
        }
        peak = std::max(peak, p);
    }
    if (peak <= kPowerEpsilon) {
        std::fill(out.values.begin(), out.values.end(), db_floor);
        return out;
    }
    const double ref = 10.0 * std::log10(peak);
    for (std::size_t i = 0; i < power.values.size(); ++i) {
        const double db = 10.0 * std::log10(std::max(power.values[i], kPowerEpsilon)) - ref;
        out.values[i] = std::clamp(db, db_floor, 0.0);
    }
    return out;
}

/// Maps dB (rows = mel bands ascending, cols = frames) to [0,1] intensity and
/// resizes with corner-aligned bilinear interpolation. Output row 0 holds the
/// highest band so the image reads like a conventional spectrogram plot.
inline SpectrogramImage render_grayscale(const Matrix& db, const FeatureProfile& profile) {
    if (db.rows == 0 || db.cols == 0 || db.values.size() != db.rows * db.cols) {
        fail(ErrorCode::DimensionMismatch, "empty or ragged dB matrix");
    }
    if (profile.image_h <= 0 || profile.image_w <= 0 || !(profile.db_floor < 0.0)) {
        fail(ErrorCode::InvalidProfile, "bad image size or db_floor");
    }
    const double span = -profile.db_floor;
    auto intensity = [&](std::size_t r, std::size_t c) {
        return std::clamp((db(r, c) - profile.db_floor) / span, 0.0, 1.0);
    };
    auto coord = [](int i, int out_n, std::size_t in_n) {
        if (out_n == 1 || in_n == 1) {
            return 0.0;
        }
        return static_cast<double>(i) * static_cast<double>(in_n - 1) / static_cast<double>(out_n - 1);
    };

    SpectrogramImage img;
    img.height = profile.image_h;
    img.width = profile.image_w;
    img.profile = profile;
    img.pixels.resize(static_cast<std::size_t>(img.height) * img.width);
    for (int r = 0; r < img.height; ++r) {
        // Flip so the top row is the highest band.
        const double y = static_cast<double>(db.rows - 1) - coord(r, img.height, db.rows);
        const auto y0 = static_cast<std::size_t>(std::floor(y));
        const auto y1 = std::min(y0 + 1, db.rows - 1);
        const double fy = y - static_cast<double>(y0);
        for (int c = 0; c < img.width; ++c) {
            const double x = coord(c, img.width, db.cols);
            const auto x0 = static_cast<std::size_t>(std::floor(x));
            const auto x1 = std::min(x0 + 1, db.cols - 1);
            const double fx = x - static_cast<double>(x0);
            const double top = intensity(y0, x0) * (1.0 - fx) + intensity(y0, x1) * fx;
            const double bottom = intensity(y1, x0) * (1.0 - fx) + intensity(y1, x1) * fx;
            const double v = top * (1.0 - fy) + bottom * fy;
            img.pixels[static_cast<std::size_t>(r) * img.width + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return img;
}

/// Mel power spectrogram (n_mels x frames) before dB conversion.
inline Matrix mel_power(const AudioClip& clip, const FeatureProfile& profile, const Matrix& filterbank) {
    return apply_filterbank(filterbank, stft_power(clip, profile));
}

inline SpectrogramImage featurize(const AudioClip& clip, const FeatureProfile& profile, const Matrix& filterbank) {
    return render_grayscale(power_to_db(mel_power(clip, profile, filterbank), profile.db_floor), profile);
}

inline SpectrogramImage featurize(const AudioClip& clip, const FeatureProfile& profile) {
    if (clip.sample_rate != kPipelineRate) {
        return featurize(resample(clip, kPipelineRate), profile);
    }
    return featurize(clip, profile, mel_filterbank(profile, kPipelineRate));
}

/// 8-bit grayscale PNG, intensity * 255 rounded. For inspection only.
inline std::vector<std::uint8_t> encode_png(const SpectrogramImage& img) {
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(img.height) * (img.width + 1));
    for (int r = 0; r < img.height; ++r) {
        raw.push_back(0); // filter: none
        for (int c = 0; c < img.width; ++c) {
            raw.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(img.at(r, c), 0.0f, 1.0f) * 255.0f)));
        }
    }
    uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> packed(packed_size);
    if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
        fail(ErrorCode::IoError, "zlib compression failed");
    }
    packed.resize(packed_size);

    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    auto be32 = [&](std::vector<std::uint8_t>& dst, std::uint32_t v) {
        for (int s = 24; s >= 0; s -= 8) {
            dst.push_back(static_cast<std::uint8_t>(v >> s));
        }
    };
    auto chunk = [&](const char* type, const std::vector<std::uint8_t>& body) {
        be32(out, static_cast<std::uint32_t>(body.size()));
        std::vector<std::uint8_t> typed(type, type + 4);
        typed.insert(typed.end(), body.begin(), body.end());
        out.insert(out.end(), typed.begin(), typed.end());
        be32(out, bytes::crc32(typed));
    };
    std::vector<std::uint8_t> ihdr;
    be32(ihdr, static_cast<std::uint32_t>(img.width));
    be32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0}); // 8-bit, grayscale, deflate, no filter, no interlace
    chunk("IHDR", ihdr);
    chunk("IDAT", packed);
    chunk("IEND", {});
    return out;
}

inline void write_png(const std::filesystem::path& path, const SpectrogramImage& img) {
    bytes::write_file(path, encode_png(img));
}

} // namespace coughnet
