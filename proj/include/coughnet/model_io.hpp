#pragma once

// Model file layout (all integers little-endian):
//   "CGHM" | u16 version | u32 header length | header text (UTF-8)
//   | per parameter: u32 rank, u32 dims..., f32 values...
//   | u32 CRC-32 of every preceding byte

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "coughnet/bytes.hpp"
#include "coughnet/error.hpp"
#include "coughnet/model.hpp"

namespace coughnet {

inline constexpr char kModelMagic[] = "CGHM";
inline constexpr std::uint16_t kModelVersion = 1;

namespace detail {

inline std::string hex_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

inline double parse_double(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') {
        fail(ErrorCode::CorruptModelFile, "bad number '" + s + "' in model header");
    }
    return v;
}

inline std::string model_header(const ModelSpec& spec, const FeatureProfile& profile, const TrainingMeta& meta) {
    std::ostringstream os;
    os << "name " << spec.name << '\n';
    os << "input";
    for (auto d : spec.input) os << ' ' << d;
    os << "\nclasses";
    for (const auto& c : spec.class_names) os << ' ' << c;
    os << '\n';
    for (const auto& l : spec.layers) os << "layer " << layer_to_text(l) << '\n';
    std::istringstream profile_lines(profile.to_text());
    for (std::string line; std::getline(profile_lines, line);) os << "profile " << line << '\n';
    os << "seed " << meta.seed << '\n';
    os << "epochs_trained " << meta.epochs_trained << '\n';
    os << "best_epoch " << meta.best_epoch << '\n';
    os << "best_val_loss " << hex_double(meta.best_val_loss) << '\n';
    return os.str();
}

struct ParsedHeader {
    ModelSpec spec;
    FeatureProfile profile;
    TrainingMeta meta;
};

inline ParsedHeader parse_model_header(const std::string& text) {
    ParsedHeader h;
    std::string profile_text;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto sp = line.find(' ');
        const auto key = line.substr(0, sp);
        const auto rest = sp == std::string::npos ? std::string{} : line.substr(sp + 1);
        std::istringstream fields(rest);
        try {
            if (key == "name") {
                h.spec.name = rest;
            } else if (key == "input") {
                for (std::size_t d; fields >> d;) h.spec.input.push_back(d);
            } else if (key == "classes") {
                for (std::string c; fields >> c;) h.spec.class_names.push_back(c);
            } else if (key == "layer") {
                h.spec.layers.push_back(layer_from_text(rest));
            } else if (key == "profile") {
                profile_text += rest + '\n';
            } else if (key == "seed") {
                h.meta.seed = std::stoull(rest);
            } else if (key == "epochs_trained") {
                h.meta.epochs_trained = static_cast<std::uint32_t>(std::stoul(rest));
            } else if (key == "best_epoch") {
                h.meta.best_epoch = static_cast<std::uint32_t>(std::stoul(rest));
            } else if (key == "best_val_loss") {
                h.meta.best_val_loss = parse_double(rest);
            } else {
                fail(ErrorCode::CorruptModelFile, "unknown header key '" + key + "'");
            }
        } catch (const std::logic_error&) {
            fail(ErrorCode::CorruptModelFile, "bad header line '" + line + "'");
        } catch (const Error& e) {
            fail(ErrorCode::CorruptModelFile, e.what());
        }
    }
    try {
        h.profile = FeatureProfile::from_text(profile_text);
        h.spec.propagate();
    } catch (const Error& e) {
        fail(ErrorCode::CorruptModelFile, e.what());
    }
    return h;
}

} // namespace detail

/// Parameters are stored as 32-bit floats; a Model<float> round-trips exactly.
template <typename Real>
std::vector<std::uint8_t> encode_model(const Model<Real>& model) {
    const auto shapes = model.spec.parameter_shapes();
    if (shapes.size() != model.params.size()) {
        fail(ErrorCode::ShapeMismatch, "model has " + std::to_string(model.params.size()) + " parameter tensors, spec expects " +
                                           std::to_string(shapes.size()));
    }
    bytes::Writer w;
    w.raw(std::string_view(kModelMagic, 4));
    w.u16(kModelVersion);
    const auto header = detail::model_header(model.spec, model.profile, model.meta);
    w.u32(static_cast<std::uint32_t>(header.size()));
    w.raw(header);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& p = model.params[i];
        if (p.shape() != shapes[i]) {
            fail(ErrorCode::ShapeMismatch, "parameter " + std::to_string(i) + " has shape " + shape_string(p.shape()));
        }
        w.u32(static_cast<std::uint32_t>(p.rank()));
        for (auto d : p.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (auto v : p.values()) w.f32(static_cast<float>(v));
    }
    const auto crc = bytes::crc32(w.data());
    w.u32(crc);
    return w.take();
}

template <typename Real = float>
Model<Real> decode_model(std::span<const std::uint8_t> data) {
    if (data.size() < 4 + 2 + 4 + 4 || std::string_view(reinterpret_cast<const char*>(data.data()), 4) !=
                                           std::string_view(kModelMagic, 4)) {
        fail(ErrorCode::CorruptModelFile, "bad magic bytes");
    }
    const auto body = data.first(data.size() - 4);
    bytes::Reader tail(data.last(4), ErrorCode::CorruptModelFile);
    if (bytes::crc32(body) != tail.u32()) {
        fail(ErrorCode::CorruptModelFile, "checksum mismatch");
    }
    bytes::Reader r(body, ErrorCode::CorruptModelFile);
    r.skip(4);
    if (const auto version = r.u16(); version != kModelVersion) {
        fail(ErrorCode::VersionMismatch, "model file version " + std::to_string(version) + ", expected " +
                                             std::to_string(kModelVersion));
    }
    const auto header_len = r.u32();
    auto h = detail::parse_model_header(r.str(header_len));
    Model<Real> model{std::move(h.spec), h.profile, {}, h.meta};
    for (const auto& shape : model.spec.parameter_shapes()) {
        const auto rank = r.u32();
        Shape stored(rank);
        for (auto& d : stored) d = r.u32();
        if (stored != shape) {
            fail(ErrorCode::CorruptModelFile, "stored tensor " + shape_string(stored) + " expected " + shape_string(shape));
        }
        std::vector<Real> values(shape_size(shape));
        for (auto& v : values) v = static_cast<Real>(r.f32());
        model.params.emplace_back(shape, std::move(values));
        if (!model.params.back().all_finite()) {
            fail(ErrorCode::CorruptModelFile, "non-finite parameter values");
        }
    }
    if (r.remaining() != 0) {
        fail(ErrorCode::CorruptModelFile, "trailing bytes after parameters");
    }
    return model;
}

template <typename Real>
void save_model(const Model<Real>& model, const std::filesystem::path& path) {
    bytes::write_file(path, encode_model(model));
}

template <typename Real = float>
Model<Real> load_model(const std::filesystem::path& path) {
    const auto data = bytes::read_file(path);
    return decode_model<Real>(data);
}

} // namespace coughnet
