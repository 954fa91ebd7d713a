#pragma once

// Synthetic corpora with known structure, used where the clinical recordings
// are unavailable: broadband cough-like bursts over ambient noise for
// detection, and three spectrally distinct burst families for diagnosis.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "coughnet/audio_io.hpp"
#include "coughnet/datasets.hpp"
#include "coughnet/model.hpp"
#include "coughnet/rng.hpp"

namespace coughnet::synth {

inline double gaussian(Rng& rng) {
    const double u1 = std::max(uniform01(rng), 1e-300);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// RBJ band-pass biquad (0 dB peak gain).
class BandPass {
public:
    BandPass(double center_hz, double q, double rate) {
        const double w0 = 2.0 * std::numbers::pi * center_hz / rate;
        const double alpha = std::sin(w0) / (2.0 * q);
        const double a0 = 1.0 + alpha;
        b0_ = alpha / a0;
        b2_ = -alpha / a0;
        a1_ = -2.0 * std::cos(w0) / a0;
        a2_ = (1.0 - alpha) / a0;
    }
    double operator()(double x) {
        const double y = b0_ * x + b2_ * x2_ - a1_ * y1_ - a2_ * y2_;
        x2_ = x1_;
        x1_ = x;
        y2_ = y1_;
        y1_ = y;
        return y;
    }

private:
    double b0_, b2_, a1_, a2_;
    double x1_ = 0, x2_ = 0, y1_ = 0, y2_ = 0;
};

/// Low-passed noise with a few tonal events (birdsong/alarm stand-ins).
inline std::vector<double> ambient(std::size_t n, double rate, Rng& rng) {
    std::vector<double> out(n);
    const double level = uniform(rng, 0.03, 0.12);
    const double pole = uniform(rng, 0.85, 0.98);
    double state = 0.0;
    for (auto& s : out) {
        state = pole * state + (1.0 - pole) * gaussian(rng);
        s = level * state * 6.0;
    }
    const int tones = static_cast<int>(uniform_index(rng, 4));
    for (int t = 0; t < tones; ++t) {
        const double f0 = uniform(rng, 300.0, 3000.0);
        const double f1 = f0 * uniform(rng, 0.7, 1.4);
        const double amp = uniform(rng, 0.05, 0.3);
        const auto len = static_cast<std::size_t>(uniform(rng, 0.2, 1.0) * rate);
        const auto start = static_cast<std::size_t>(uniform_index(rng, n - len));
        double phase = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double frac = static_cast<double>(i) / static_cast<double>(len);
            phase += 2.0 * std::numbers::pi * (f0 + (f1 - f0) * frac) / rate;
            const double env = std::sin(std::numbers::pi * frac);
            out[start + i] += amp * env * std::sin(phase);
        }
    }
    return out;
}

/// Adds one burst of filtered noise with fast attack and exponential decay.
inline void add_burst(std::vector<double>& out, std::size_t start, double seconds, double amp, double rate,
                      Rng& rng, BandPass* shape) {
    const auto len = std::min(out.size() - start, static_cast<std::size_t>(seconds * rate));
    const double attack = 0.01 * rate;
    const double decay = uniform(rng, 0.06, 0.12) * rate;
    for (std::size_t i = 0; i < len; ++i) {
        const double t = static_cast<double>(i);
        const double env = t < attack ? t / attack : std::exp(-(t - attack) / decay);
        double x = gaussian(rng);
        if (shape) x = (*shape)(x) * 3.0;
        out[start + i] += amp * env * x;
    }
}

inline AudioClip finish(std::vector<double> samples, std::string id) {
    double peak = 0.0;
    for (double s : samples) peak = std::max(peak, std::abs(s));
    const double gain = peak > 0.95 ? 0.95 / peak : 1.0;
    for (auto& s : samples) s *= gain;
    return AudioClip{std::move(samples), kPipelineRate, std::move(id)};
}

/// 5 s detection clip; label 1 = cough (1-3 bursts over ambient), 0 = ambient only.
inline AudioClip detection_clip(int label, Rng& rng) {
    const double rate = kPipelineRate;
    const auto n = static_cast<std::size_t>(kDetectionWindowSeconds * rate);
    auto samples = ambient(n, rate, rng);
    if (label == 1) {
        const int bursts = 1 + static_cast<int>(uniform_index(rng, 3));
        for (int b = 0; b < bursts; ++b) {
            const double seconds = uniform(rng, 0.2, 0.45);
            const auto start = static_cast<std::size_t>(uniform(rng, 0.0, 5.0 - seconds) * rate);
            add_burst(samples, start, seconds, uniform(rng, 0.35, 0.8), rate, rng, nullptr);
        }
    }
    return finish(std::move(samples), label == 1 ? "cough" : "ambient");
}

/// Single-event diagnosis clip (0.3-1.2 s, padded later to 2 s). Each class
/// has its own resonance band.
inline AudioClip diagnosis_clip(int label, Rng& rng) {
    static constexpr double kCenters[] = {500.0, 1800.0, 4500.0};
    const double rate = kPipelineRate;
    const double seconds = uniform(rng, 0.3, 1.2);
    const auto n = static_cast<std::size_t>(seconds * rate);
    std::vector<double> samples(n);
    for (auto& s : samples) s = 0.01 * gaussian(rng);
    BandPass shape(kCenters[label] * uniform(rng, 0.85, 1.15), 2.5, rate);
    add_burst(samples, static_cast<std::size_t>(uniform(rng, 0.0, 0.05) * rate), seconds, uniform(rng, 0.4, 0.8),
              rate, rng, &shape);
    return finish(std::move(samples), class_names(Task::Diagnosis)[static_cast<std::size_t>(label)]);
}

/// Writes `per_class` WAV files per class plus manifest.csv into `dir`;
/// returns the manifest path.
inline std::filesystem::path write_corpus(const std::filesystem::path& dir, Task task, std::size_t per_class,
                                          std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    const auto& names = class_names(task);
    auto rng = make_rng({seed, 0x5A17u});
    std::ofstream manifest(dir / "manifest.csv");
    manifest << "path,label\n";
    for (std::size_t i = 0; i < per_class; ++i) {
        for (std::size_t c = 0; c < names.size(); ++c) {
            const auto clip = task == Task::Detection ? detection_clip(static_cast<int>(c), rng)
                                                      : diagnosis_clip(static_cast<int>(c), rng);
            const auto file = names[c] + "_" + std::to_string(i) + ".wav";
            write_wav(dir / file, clip);
            manifest << file << ',' << names[c] << '\n';
        }
    }
    return dir / "manifest.csv";
}

/// In-memory featurized samples, alternating classes.
inline std::vector<Sample> featurized_samples(Task task, std::size_t per_class, std::uint64_t seed,
                                              const FeatureProfile& profile) {
    const auto fb = mel_filterbank(profile);
    const auto k = class_names(task).size();
    auto rng = make_rng({seed, 0x5A18u});
    std::vector<Sample> out;
    for (std::size_t i = 0; i < per_class; ++i) {
        for (std::size_t c = 0; c < k; ++c) {
            const int label = static_cast<int>(c);
            auto clip = task == Task::Detection ? detection_clip(label, rng) : diagnosis_clip(label, rng);
            clip = fit_window(clip, window_seconds(task));
            out.push_back({featurize(clip, profile, fb), label, clip.source_id + std::to_string(i)});
        }
    }
    return out;
}

} // namespace coughnet::synth
