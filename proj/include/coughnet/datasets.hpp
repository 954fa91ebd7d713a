#pragma once

// Manifest-driven corpora: CSV manifests, stratified train/val/test splits,
// epoch batching, and the on-disk feature cache.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "coughnet/audio_io.hpp"
#include "coughnet/bytes.hpp"
#include "coughnet/error.hpp"
#include "coughnet/featurize.hpp"
#include "coughnet/model.hpp"
#include "coughnet/parallel.hpp"
#include "coughnet/rng.hpp"

namespace coughnet {

enum class Split { Train, Val, Test };

inline std::string_view to_string(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "val" || s == "validation") return Split::Val;
    if (s == "test") return Split::Test;
    return std::nullopt;
}

struct ManifestEntry {
    std::filesystem::path path; // resolved against the manifest directory
    int label = 0;
    std::optional<Split> split; // explicit override
    std::string patient;        // empty when the manifest has no patient column
};

struct DatasetManifest {
    Task task = Task::Detection;
    std::vector<std::string> label_names;
    std::vector<ManifestEntry> entries;

    std::size_t size() const { return entries.size(); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t row) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back() += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                fields.back() += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.emplace_back();
        } else if (ch != '\r') {
            fields.back() += ch;
        }
    }
    if (quoted) {
        fail(ErrorCode::ParseError, "row " + std::to_string(row) + ": unterminated quote");
    }
    for (auto& f : fields) {
        const auto b = f.find_first_not_of(" \t");
        const auto e = f.find_last_not_of(" \t");
        f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
    }
    return fields;
}

} // namespace detail

/// Parses manifest text. Columns: path,label[,split][,patient]; a header row
/// starting with "path" may name the columns in any order.
inline DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir, Task task) {
    DatasetManifest m;
    m.task = task;
    m.label_names = class_names(task);
    std::size_t col_path = 0, col_label = 1;
    std::optional<std::size_t> col_split = 2, col_patient;
    std::set<std::filesystem::path> seen;

    std::istringstream is(text);
    std::string line;
    std::size_t row = 0;
    bool first = true;
    while (std::getline(is, line)) {
        ++row;
        if (row == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
        if (line.find_first_not_of(" \t\r") == std::string::npos || line.starts_with('#')) continue;
        auto fields = detail::split_csv_line(line, row);
        if (first) {
            first = false;
            if (std::find(fields.begin(), fields.end(), "path") != fields.end()) {
                col_split.reset();
                bool have_label = false;
                for (std::size_t i = 0; i < fields.size(); ++i) {
                    if (fields[i] == "path") col_path = i;
                    else if (fields[i] == "label") col_label = i, have_label = true;
                    else if (fields[i] == "split") col_split = i;
                    else if (fields[i] == "patient") col_patient = i;
                    else fail(ErrorCode::ParseError, "row 1: unknown column '" + fields[i] + "'");
                }
                if (!have_label) fail(ErrorCode::ParseError, "row 1: header lacks a label column");
                continue;
            }
        }
        auto field = [&](std::optional<std::size_t> col) -> std::string {
            return col && *col < fields.size() ? fields[*col] : std::string{};
        };
        if (fields.size() <= std::max(col_path, col_label)) {
            fail(ErrorCode::ParseError, "row " + std::to_string(row) + ": expected at least " +
                                            std::to_string(std::max(col_path, col_label) + 1) + " columns, got " +
                                            std::to_string(fields.size()));
        }
        const auto path_text = field(col_path);
        const auto label_text = field(col_label);
        if (path_text.empty()) {
            fail(ErrorCode::ParseError, "row " + std::to_string(row) + ", column " + std::to_string(col_path + 1) + ": empty path");
        }
        const auto it = std::find(m.label_names.begin(), m.label_names.end(), label_text);
        if (it == m.label_names.end()) {
            fail(ErrorCode::UnknownLabel, "row " + std::to_string(row) + ": label '" + label_text + "' is not a " +
                                              std::string(to_string(task)) + " class");
        }
        ManifestEntry e;
        std::filesystem::path p(path_text);
        e.path = (p.is_absolute() ? p : base_dir / p).lexically_normal();
        e.label = static_cast<int>(it - m.label_names.begin());
        if (const auto s = field(col_split); !s.empty()) {
            e.split = parse_split(s);
            if (!e.split) {
                fail(ErrorCode::ParseError, "row " + std::to_string(row) + ": unknown split '" + s + "'");
            }
        }
        e.patient = field(col_patient);
        if (!seen.insert(e.path).second) {
            fail(ErrorCode::DuplicatePath, "row " + std::to_string(row) + ": " + e.path.string() + " listed twice");
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path, Task task) {
    const auto data = bytes::read_file(path);
    return parse_manifest(std::string(data.begin(), data.end()), path.parent_path(), task);
}

struct SplitRatios {
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;
};

struct SplitAssignment {
    std::vector<Split> assignment; // parallel to manifest entries
    std::uint64_t seed = 0;

    std::vector<std::size_t> indices(Split which) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignment.size(); ++i) {
            if (assignment[i] == which) out.push_back(i);
        }
        return out;
    }
};

/// Per class: shuffle with a seeded generator, then floor(n*train) to train,
/// floor(n*val) to val, remainder to test. Rows with an explicit split keep it.
/// With a patient column, whole patients are the units being split.
inline SplitAssignment stratified_split(const DatasetManifest& manifest, SplitRatios ratios, std::uint64_t seed) {
    if (!(ratios.train > 0 && ratios.val > 0 && ratios.test > 0) ||
        std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
        fail(ErrorCode::InvalidArgument, "split ratios must be positive and sum to 1");
    }
    SplitAssignment out{std::vector<Split>(manifest.size(), Split::Train), seed};
    const std::size_t k = manifest.label_names.size();
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t class_total = 0;
        // Units in first-appearance order; each unit is one row or one patient.
        std::vector<std::vector<std::size_t>> units;
        std::map<std::string, std::size_t> unit_of_patient;
        for (std::size_t i = 0; i < manifest.size(); ++i) {
            const auto& e = manifest.entries[i];
            if (e.label != static_cast<int>(c)) continue;
            ++class_total;
            if (e.split) {
                out.assignment[i] = *e.split;
                continue;
            }
            if (e.patient.empty()) {
                units.push_back({i});
            } else {
                auto [it, inserted] = unit_of_patient.try_emplace(e.patient, units.size());
                if (inserted) units.emplace_back();
                units[it->second].push_back(i);
            }
        }
        if (class_total < 3) {
            fail(ErrorCode::ClassTooSmall, "class '" + manifest.label_names[c] + "' has " + std::to_string(class_total) +
                                               " entries; at least 3 are needed");
        }
        auto rng = make_rng({seed, c});
        shuffle(units, rng);
        const auto n = static_cast<double>(units.size());
        const auto n_train = static_cast<std::size_t>(std::floor(n * ratios.train + 1e-9));
        const auto n_val = static_cast<std::size_t>(std::floor(n * ratios.val + 1e-9));
        for (std::size_t u = 0; u < units.size(); ++u) {
            const Split s = u < n_train ? Split::Train : u < n_train + n_val ? Split::Val : Split::Test;
            for (auto i : units[u]) out.assignment[i] = s;
        }
    }
    return out;
}

/// Epoch ordering: a permutation of [0, n) keyed by (seed, epoch), cut into
/// consecutive batches; the last batch may be short.
inline std::vector<std::vector<std::size_t>> batch_order(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                          std::uint64_t epoch) {
    if (batch_size < 1) {
        fail(ErrorCode::InvalidArgument, "batch size must be >= 1");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto rng = make_rng({seed, epoch, 0xBA7Cu});
    shuffle(order, rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
    }
    return batches;
}

struct Sample {
    SpectrogramImage image;
    int label = 0;
    std::string source;
};

struct Batch {
    std::vector<std::size_t> indices;
    std::vector<std::reference_wrapper<const SpectrogramImage>> images;
    std::vector<int> labels;

    std::size_t size() const { return indices.size(); }
};

inline std::vector<Batch> make_batches(std::span<const Sample> samples, std::size_t batch_size, std::uint64_t seed,
                                       std::uint64_t epoch) {
    std::vector<Batch> out;
    for (auto& idx : batch_order(samples.size(), batch_size, seed, epoch)) {
        Batch b;
        for (auto i : idx) {
            b.images.emplace_back(samples[i].image);
            b.labels.push_back(samples[i].label);
        }
        b.indices = std::move(idx);
        out.push_back(std::move(b));
    }
    return out;
}

// ---------------------------------------------------------------- feature cache

inline constexpr char kFeatureMagic[] = "CGHF";
inline constexpr std::uint16_t kFeatureVersion = 1;

inline double window_seconds(Task task) {
    return task == Task::Detection ? kDetectionWindowSeconds : kDiagnosisWindowSeconds;
}

/// Identifies everything that determines a cached image other than the audio.
inline std::uint32_t profile_key(const FeatureProfile& profile, Task task) {
    return bytes::crc32(profile.to_text() + "window=" + std::string(to_string(task)) + "\n");
}

struct FeatureCache {
    bool enabled = false;
    std::optional<std::filesystem::path> dir; // unset: next to each audio file

    std::filesystem::path blob_path(const std::filesystem::path& audio, std::uint32_t file_crc,
                                    std::uint32_t key) const {
        char suffix[32];
        std::snprintf(suffix, sizeof suffix, ".%08x.%08x.cghf", file_crc, key);
        const auto base = dir ? *dir : audio.parent_path();
        return base / (audio.stem().string() + suffix);
    }
};

inline std::vector<std::uint8_t> encode_feature_blob(const SpectrogramImage& img, std::uint32_t key,
                                                     std::uint32_t file_crc) {
    bytes::Writer w;
    w.raw(std::string_view(kFeatureMagic, 4));
    w.u16(kFeatureVersion);
    w.u32(key);
    w.u32(file_crc);
    w.u32(static_cast<std::uint32_t>(img.height));
    w.u32(static_cast<std::uint32_t>(img.width));
    for (float p : img.pixels) w.f32(p);
    return w.take();
}

/// Returns nullopt for any blob that does not match exactly (stale or damaged).
inline std::optional<SpectrogramImage> decode_feature_blob(std::span<const std::uint8_t> data,
                                                          const FeatureProfile& profile, std::uint32_t key,
                                                          std::uint32_t file_crc) {
    try {
        bytes::Reader r(data, ErrorCode::CorruptModelFile);
        if (r.str(4) != std::string_view(kFeatureMagic, 4) || r.u16() != kFeatureVersion || r.u32() != key ||
            r.u32() != file_crc) {
            return std::nullopt;
        }
        SpectrogramImage img;
        img.height = static_cast<int>(r.u32());
        img.width = static_cast<int>(r.u32());
        if (img.height != profile.image_h || img.width != profile.image_w) return std::nullopt;
        img.profile = profile;
        img.pixels.resize(static_cast<std::size_t>(img.height) * img.width);
        for (auto& p : img.pixels) p = r.f32();
        if (r.remaining() != 0) return std::nullopt;
        return img;
    } catch (const Error&) {
        return std::nullopt;
    }
}

struct FeaturizedFile {
    SpectrogramImage image;
    bool cache_hit = false;
    std::optional<std::filesystem::path> blob;
};

/// Reads, windows and featurizes one file, consulting the cache when enabled.
/// Errors are rethrown with the path attached.
inline FeaturizedFile featurize_file(const std::filesystem::path& path, Task task, const FeatureProfile& profile,
                                     const Matrix& filterbank, const FeatureCache& cache = {}) {
    try {
        const auto data = bytes::read_file(path);
        const auto key = profile_key(profile, task);
        const auto file_crc = bytes::crc32(data);
        std::optional<std::filesystem::path> blob;
        if (cache.enabled) {
            blob = cache.blob_path(path, file_crc, key);
            if (std::filesystem::exists(*blob)) {
                if (auto img = decode_feature_blob(bytes::read_file(*blob), profile, key, file_crc)) {
                    return {std::move(*img), true, blob};
                }
            }
        }
        const auto clip = fit_window(decode_wav(data, path.string()), window_seconds(task));
        FeaturizedFile out{featurize(clip, profile, filterbank), false, blob};
        if (blob) {
            std::filesystem::create_directories(blob->parent_path());
            bytes::write_file(*blob, encode_feature_blob(out.image, key, file_crc));
        }
        return out;
    } catch (const Error& e) {
        if (std::string(e.what()).find(path.string()) != std::string::npos) throw;
        fail(e.code(), path.string() + ": " + e.what());
    }
}

inline std::vector<Sample> load_samples(const DatasetManifest& manifest, std::span<const std::size_t> indices,
                                        const FeatureProfile& profile, const FeatureCache& cache = {},
                                        std::size_t threads = 1) {
    const auto fb = mel_filterbank(profile, kPipelineRate);
    std::vector<Sample> out(indices.size());
    parallel_for(indices.size(), threads, [&](std::size_t i) {
        const auto& e = manifest.entries.at(indices[i]);
        out[i] = Sample{featurize_file(e.path, manifest.task, profile, fb, cache).image, e.label, e.path.string()};
    });
    return out;
}

} // namespace coughnet
