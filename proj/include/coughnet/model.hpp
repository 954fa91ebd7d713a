#pragma once

// Layer specifications, the detection and diagnosis architectures, and the
// whole-network forward/backward passes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "coughnet/error.hpp"
#include "coughnet/featurize.hpp"
#include "coughnet/layers.hpp"
#include "coughnet/rng.hpp"
#include "coughnet/tensor.hpp"

namespace coughnet {

enum class Task { Detection, Diagnosis };

inline const std::vector<std::string>& class_names(Task task) {
    static const std::vector<std::string> detection = {"no_cough", "cough"};
    static const std::vector<std::string> diagnosis = {"bronchiolitis", "bronchitis", "pertussis"};
    return task == Task::Detection ? detection : diagnosis;
}

inline std::string_view to_string(Task task) {
    return task == Task::Detection ? "detection" : "diagnosis";
}

inline Task parse_task(std::string_view s) {
    if (s == "detection") return Task::Detection;
    if (s == "diagnosis") return Task::Diagnosis;
    fail(ErrorCode::InvalidArgument, "unknown task '" + std::string(s) + "' (expected detection or diagnosis)");
}

namespace layer {
struct MaxPool2d { std::size_t pool = 2; bool operator==(const MaxPool2d&) const = default; };
struct Conv2d { std::size_t filters = 32; std::size_t kernel = 5; std::size_t stride = 1; bool operator==(const Conv2d&) const = default; };
struct Relu { bool operator==(const Relu&) const = default; };
struct Dropout { double rate = 0.0; bool operator==(const Dropout&) const = default; };
struct Flatten { bool operator==(const Flatten&) const = default; };
struct Dense { std::size_t units = 128; bool operator==(const Dense&) const = default; };
struct Softmax { bool operator==(const Softmax&) const = default; };
} // namespace layer

using LayerSpec = std::variant<layer::MaxPool2d, layer::Conv2d, layer::Relu, layer::Dropout, layer::Flatten,
                               layer::Dense, layer::Softmax>;

inline bool has_parameters(const LayerSpec& l) {
    return std::holds_alternative<layer::Conv2d>(l) || std::holds_alternative<layer::Dense>(l);
}

inline std::string layer_to_text(const LayerSpec& l) {
    std::ostringstream os;
    os.precision(17);
    std::visit(
        [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, layer::MaxPool2d>) os << "maxpool2d " << v.pool;
            else if constexpr (std::is_same_v<T, layer::Conv2d>) os << "conv2d " << v.filters << ' ' << v.kernel << ' ' << v.stride;
            else if constexpr (std::is_same_v<T, layer::Relu>) os << "relu";
            else if constexpr (std::is_same_v<T, layer::Dropout>) os << "dropout " << v.rate;
            else if constexpr (std::is_same_v<T, layer::Flatten>) os << "flatten";
            else if constexpr (std::is_same_v<T, layer::Dense>) os << "dense " << v.units;
            else os << "softmax";
        },
        l);
    return os.str();
}

inline LayerSpec layer_from_text(const std::string& text) {
    std::istringstream is(text);
    std::string kind;
    is >> kind;
    auto need = [&](auto& value) {
        if (!(is >> value)) {
            fail(ErrorCode::ParseError, "bad layer description '" + text + "'");
        }
    };
    LayerSpec out;
    if (kind == "maxpool2d") { layer::MaxPool2d l; need(l.pool); out = l; }
    else if (kind == "conv2d") { layer::Conv2d l; need(l.filters); need(l.kernel); need(l.stride); out = l; }
    else if (kind == "relu") out = layer::Relu{};
    else if (kind == "dropout") { layer::Dropout l; need(l.rate); out = l; }
    else if (kind == "flatten") out = layer::Flatten{};
    else if (kind == "dense") { layer::Dense l; need(l.units); out = l; }
    else if (kind == "softmax") out = layer::Softmax{};
    else fail(ErrorCode::ParseError, "unknown layer kind '" + kind + "'");
    std::string extra;
    if (is >> extra) {
        fail(ErrorCode::ParseError, "trailing tokens in layer description '" + text + "'");
    }
    return out;
}

struct ModelSpec {
    std::string name;
    Shape input;                           // {channels, height, width}
    std::vector<LayerSpec> layers;
    std::vector<std::string> class_names;

    std::size_t n_classes() const { return class_names.size(); }

    /// shapes[i] is the input to layer i; shapes.back() is the network output.
    /// Throws ShapeMismatch naming the offending layer.
    std::vector<Shape> propagate() const {
        if (input.size() != 3 || shape_size(input) == 0) {
            fail(ErrorCode::ShapeMismatch, "model input must be (channels, height, width)");
        }
        std::vector<Shape> shapes{input};
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const Shape& s = shapes.back();
            auto bad = [&](const std::string& why) {
                fail(ErrorCode::ShapeMismatch,
                     "layer " + std::to_string(i) + " (" + layer_to_text(layers[i]) + "): " + why + ", input " + shape_string(s));
            };
            Shape next = std::visit(
                [&](const auto& l) -> Shape {
                    using T = std::decay_t<decltype(l)>;
                    if constexpr (std::is_same_v<T, layer::MaxPool2d>) {
                        if (s.size() != 3 || l.pool < 1 || s[1] < l.pool || s[2] < l.pool) bad("input too small to pool");
                        return {s[0], s[1] / l.pool, s[2] / l.pool};
                    } else if constexpr (std::is_same_v<T, layer::Conv2d>) {
                        if (s.size() != 3 || l.kernel < 1 || l.stride < 1 || l.filters < 1) bad("invalid convolution");
                        if (s[1] < l.kernel || s[2] < l.kernel) bad("input smaller than kernel");
                        return {l.filters, nn::conv_output_dim(s[1], l.kernel, l.stride),
                                nn::conv_output_dim(s[2], l.kernel, l.stride)};
                    } else if constexpr (std::is_same_v<T, layer::Dropout>) {
                        if (!(l.rate >= 0.0 && l.rate < 1.0)) bad("dropout rate outside [0,1)");
                        return s;
                    } else if constexpr (std::is_same_v<T, layer::Flatten>) {
                        return {shape_size(s)};
                    } else if constexpr (std::is_same_v<T, layer::Dense>) {
                        if (s.size() != 1) bad("dense needs flattened input");
                        if (l.units < 1) bad("dense needs at least one unit");
                        return {l.units};
                    } else if constexpr (std::is_same_v<T, layer::Softmax>) {
                        if (s.size() != 1) bad("softmax needs a vector");
                        if (i + 1 != layers.size()) bad("softmax must be the final layer");
                        return s;
                    } else {
                        return s;
                    }
                },
                layers[i]);
            shapes.push_back(std::move(next));
        }
        if (shapes.back() != Shape{n_classes()}) {
            fail(ErrorCode::ShapeMismatch, "network output " + shape_string(shapes.back()) + " does not match " +
                                               std::to_string(n_classes()) + " classes");
        }
        return shapes;
    }

    /// Size of the vector produced by the (single) flatten layer.
    std::size_t flatten_size() const {
        const auto shapes = propagate();
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (std::holds_alternative<layer::Flatten>(layers[i])) {
                return shapes[i + 1][0];
            }
        }
        return 0;
    }

    /// Parameter tensor shapes in declaration order: weight then bias per
    /// conv/dense layer.
    std::vector<Shape> parameter_shapes() const {
        const auto shapes = propagate();
        std::vector<Shape> out;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (const auto* c = std::get_if<layer::Conv2d>(&layers[i])) {
                out.push_back({c->filters, shapes[i][0], c->kernel, c->kernel});
                out.push_back({c->filters});
            } else if (const auto* d = std::get_if<layer::Dense>(&layers[i])) {
                out.push_back({d->units, shapes[i][0]});
                out.push_back({d->units});
            }
        }
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& s : parameter_shapes()) {
            n += shape_size(s);
        }
        return n;
    }

    bool operator==(const ModelSpec&) const = default;
};

/// Filter and unit counts. The defaults are the full-size architecture;
/// smaller widths are used for fast tests.
struct ArchitectureWidth {
    std::size_t filters = 32;
    std::size_t dense_units = 128;
};

inline constexpr std::size_t kDetectionMinInput = 24;
inline constexpr std::size_t kDiagnosisMinInput = 56;

namespace detail {

inline void append_conv_block(std::vector<LayerSpec>& layers, std::size_t filters) {
    layers.push_back(layer::Conv2d{filters, 5, 1});
    layers.push_back(layer::Relu{});
    layers.push_back(layer::Conv2d{filters, 5, 1});
    layers.push_back(layer::Relu{});
    layers.push_back(layer::MaxPool2d{2});
    layers.push_back(layer::Dropout{0.2});
}

inline void append_head(std::vector<LayerSpec>& layers, std::size_t units, std::size_t classes) {
    layers.push_back(layer::Flatten{});
    for (int i = 0; i < 2; ++i) {
        layers.push_back(layer::Dense{units});
        layers.push_back(layer::Relu{});
        layers.push_back(layer::Dropout{0.5});
    }
    layers.push_back(layer::Dense{classes});
    layers.push_back(layer::Softmax{});
}

inline void check_input(const Shape& input, std::size_t min_hw, const char* what) {
    if (input.size() != 3 || input[0] != 1) {
        fail(ErrorCode::ShapeMismatch, std::string(what) + " input must be (1, H, W)");
    }
    if (input[1] < min_hw || input[2] < min_hw) {
        fail(ErrorCode::InputTooSmall, std::string(what) + " input " + shape_string(input) + " below " +
                                           std::to_string(min_hw) + "x" + std::to_string(min_hw));
    }
}

} // namespace detail

/// pool -> [conv, conv, pool, dropout 0.2] -> flatten -> 2x[dense, relu,
/// dropout 0.5] -> dense(2) -> softmax.
inline ModelSpec build_detection_spec(const Shape& input, ArchitectureWidth width = {}) {
    detail::check_input(input, kDetectionMinInput, "detection");
    ModelSpec spec{"detection", input, {}, class_names(Task::Detection)};
    spec.layers.push_back(layer::MaxPool2d{2});
    detail::append_conv_block(spec.layers, width.filters);
    detail::append_head(spec.layers, width.dense_units, spec.n_classes());
    spec.propagate();
    return spec;
}

/// Detection layout with a second conv block and a 3-way output.
inline ModelSpec build_diagnosis_spec(const Shape& input, ArchitectureWidth width = {}) {
    detail::check_input(input, kDiagnosisMinInput, "diagnosis");
    ModelSpec spec{"diagnosis", input, {}, class_names(Task::Diagnosis)};
    spec.layers.push_back(layer::MaxPool2d{2});
    detail::append_conv_block(spec.layers, width.filters);
    detail::append_conv_block(spec.layers, width.filters);
    detail::append_head(spec.layers, width.dense_units, spec.n_classes());
    spec.propagate();
    return spec;
}

inline ModelSpec build_spec(Task task, const Shape& input, ArchitectureWidth width = {}) {
    return task == Task::Detection ? build_detection_spec(input, width) : build_diagnosis_spec(input, width);
}

inline std::optional<Task> task_of(const ModelSpec& spec) {
    if (spec.class_names == class_names(Task::Detection)) return Task::Detection;
    if (spec.class_names == class_names(Task::Diagnosis)) return Task::Diagnosis;
    return std::nullopt;
}

struct TrainingMeta {
    std::uint64_t seed = 0;
    std::uint32_t epochs_trained = 0;
    std::uint32_t best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();

    bool operator==(const TrainingMeta&) const = default;
};

template <typename Real>
struct Model {
    ModelSpec spec;
    FeatureProfile profile;
    std::vector<Tensor<Real>> params;
    TrainingMeta meta;
};

/// He-uniform weights (bound sqrt(6 / fan_in)), zero biases.
template <typename Real>
Model<Real> make_model(ModelSpec spec, FeatureProfile profile, std::uint64_t seed) {
    Model<Real> model{std::move(spec), profile, {}, {}};
    model.meta.seed = seed;
    auto rng = make_rng({seed, 0x1417u});
    for (const auto& shape : model.spec.parameter_shapes()) {
        Tensor<Real> t(shape);
        if (shape.size() > 1) {
            const std::size_t fan_in = shape_size(shape) / shape[0];
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (auto& v : t.values()) {
                v = static_cast<Real>(uniform(rng, -bound, bound));
            }
        }
        model.params.push_back(std::move(t));
    }
    return model;
}

template <typename To, typename From>
Model<To> cast_model(const Model<From>& m) {
    Model<To> out{m.spec, m.profile, {}, m.meta};
    for (const auto& p : m.params) {
        std::vector<To> data(p.values().begin(), p.values().end());
        out.params.emplace_back(p.shape(), std::move(data));
    }
    return out;
}

template <typename Real>
std::vector<Tensor<Real>> zero_gradients(const Model<Real>& model) {
    std::vector<Tensor<Real>> g;
    g.reserve(model.params.size());
    for (const auto& p : model.params) {
        g.emplace_back(p.shape());
    }
    return g;
}

/// Identifies one forward pass for dropout mask generation; each dropout layer
/// draws from its own stream keyed by (seed, epoch, batch, sample, layer).
struct DropoutKey {
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    std::uint64_t batch = 0;
    std::uint64_t sample = 0;
};

template <typename Real>
struct ForwardCache {
    std::vector<Tensor<Real>> inputs;                       // input to each layer
    std::vector<std::vector<Real>> dropout_scale;           // per layer, empty if unused
    std::vector<std::vector<std::uint32_t>> pool_argmax;    // per layer, empty if unused
};

template <typename Real>
Tensor<Real> to_input(const SpectrogramImage& image, const ModelSpec& spec) {
    if (spec.input.size() != 3 || spec.input[0] != 1 || static_cast<std::size_t>(image.height) != spec.input[1] ||
        static_cast<std::size_t>(image.width) != spec.input[2]) {
        fail(ErrorCode::ShapeMismatch, "image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                                           " does not match model input " + shape_string(spec.input));
    }
    return Tensor<Real>(spec.input, std::vector<Real>(image.pixels.begin(), image.pixels.end()));
}

/// Runs every layer up to (not including) the softmax and returns the logits.
/// Train mode requires a dropout key; pass a cache to enable backward().
template <typename Real>
Tensor<Real> forward(const Model<Real>& model, const Tensor<Real>& input, nn::Mode mode,
                     const DropoutKey* key = nullptr, ForwardCache<Real>* cache = nullptr) {
    const auto& layers = model.spec.layers;
    if (input.shape() != model.spec.input) {
        fail(ErrorCode::ShapeMismatch, "layer 0: input " + shape_string(input.shape()) + " expected " +
                                           shape_string(model.spec.input));
    }
    if (mode == nn::Mode::Train && key == nullptr) {
        fail(ErrorCode::InvalidArgument, "training-mode forward needs a dropout key");
    }
    if (cache) {
        cache->inputs.assign(layers.size(), {});
        cache->dropout_scale.assign(layers.size(), {});
        cache->pool_argmax.assign(layers.size(), {});
    }
    Tensor<Real> x = input;
    std::size_t p = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (std::holds_alternative<layer::Softmax>(layers[i])) {
            break;
        }
        if (cache) {
            cache->inputs[i] = x;
        }
        try {
            std::visit(
                [&](const auto& l) {
                    using T = std::decay_t<decltype(l)>;
                    if constexpr (std::is_same_v<T, layer::MaxPool2d>) {
                        auto r = nn::maxpool2d_forward(x, l.pool);
                        x = std::move(r.output);
                        if (cache) cache->pool_argmax[i] = std::move(r.argmax);
                    } else if constexpr (std::is_same_v<T, layer::Conv2d>) {
                        x = nn::conv2d_forward(x, model.params[p], model.params[p + 1], l.stride);
                        p += 2;
                    } else if constexpr (std::is_same_v<T, layer::Relu>) {
                        x = nn::relu_forward(std::move(x));
                    } else if constexpr (std::is_same_v<T, layer::Dropout>) {
                        std::optional<Rng> rng;
                        if (mode == nn::Mode::Train) {
                            rng = make_rng({key->seed, key->epoch, key->batch, key->sample, i});
                        }
                        auto r = nn::dropout_forward(x, l.rate, mode, rng ? &*rng : nullptr);
                        x = std::move(r.output);
                        if (cache) cache->dropout_scale[i] = std::move(r.scale);
                    } else if constexpr (std::is_same_v<T, layer::Flatten>) {
                        x = x.reshaped({x.size()});
                    } else if constexpr (std::is_same_v<T, layer::Dense>) {
                        x = nn::dense_forward(x, model.params[p], model.params[p + 1]);
                        p += 2;
                    }
                },
                layers[i]);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::ShapeMismatch) {
                fail(ErrorCode::ShapeMismatch, "layer " + std::to_string(i) + ": " + e.what());
            }
            throw;
        }
    }
    return x;
}

template <typename Real>
Tensor<Real> forward(const Model<Real>& model, const SpectrogramImage& image, nn::Mode mode,
                     const DropoutKey* key = nullptr, ForwardCache<Real>* cache = nullptr) {
    return forward(model, to_input<Real>(image, model.spec), mode, key, cache);
}

/// Accumulates parameter gradients for one sample into `grads`.
template <typename Real>
void backward(const Model<Real>& model, const ForwardCache<Real>& cache, Tensor<Real> dlogits,
              std::vector<Tensor<Real>>& grads) {
    const auto& layers = model.spec.layers;
    if (cache.inputs.size() != layers.size() || grads.size() != model.params.size()) {
        fail(ErrorCode::ShapeMismatch, "backward: cache or gradient set does not match the model");
    }
    std::size_t first_param_layer = layers.size();
    std::vector<std::size_t> param_at(layers.size(), 0);
    for (std::size_t i = 0, p = 0; i < layers.size(); ++i) {
        if (has_parameters(layers[i])) {
            first_param_layer = std::min(first_param_layer, i);
            param_at[i] = p;
            p += 2;
        }
    }
    std::size_t end = layers.size();
    if (end > 0 && std::holds_alternative<layer::Softmax>(layers[end - 1])) {
        --end;
    }
    Tensor<Real> g = std::move(dlogits);
    for (std::size_t i = end; i-- > first_param_layer;) {
        const Tensor<Real>& in = cache.inputs[i];
        const bool need_input = i > first_param_layer;
        try {
            std::visit(
                [&](const auto& l) {
                    using T = std::decay_t<decltype(l)>;
                    if constexpr (std::is_same_v<T, layer::MaxPool2d>) {
                        g = nn::maxpool2d_backward(in.shape(), cache.pool_argmax[i], g);
                    } else if constexpr (std::is_same_v<T, layer::Conv2d>) {
                        const auto p = param_at[i];
                        g = nn::conv2d_backward_into(in, model.params[p], l.stride, g, grads[p], grads[p + 1], need_input);
                    } else if constexpr (std::is_same_v<T, layer::Relu>) {
                        g = nn::relu_backward(in, std::move(g));
                    } else if constexpr (std::is_same_v<T, layer::Dropout>) {
                        g = nn::dropout_backward(cache.dropout_scale[i], std::move(g));
                    } else if constexpr (std::is_same_v<T, layer::Flatten>) {
                        g = g.reshaped(in.shape());
                    } else if constexpr (std::is_same_v<T, layer::Dense>) {
                        const auto p = param_at[i];
                        g = nn::dense_backward_into(in, model.params[p], g, grads[p], grads[p + 1], need_input);
                    }
                },
                layers[i]);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::ShapeMismatch) {
                fail(ErrorCode::ShapeMismatch, "layer " + std::to_string(i) + ": " + e.what());
            }
            throw;
        }
    }
}

struct ClassProbs {
    std::vector<double> probs;
    std::vector<std::string> label_names;
};

struct Prediction {
    ClassProbs probs;
    int label = 0;
};

/// First index of the maximum, so ties resolve toward the lowest class.
inline int argmax(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <typename Real>
Prediction predict(const Model<Real>& model, const SpectrogramImage& image) {
    const auto logits = forward(model, image, nn::Mode::Infer);
    const auto probs = nn::softmax(logits);
    Prediction out;
    out.probs.probs.assign(probs.values().begin(), probs.values().end());
    out.probs.label_names = model.spec.class_names;
    out.label = argmax(out.probs.probs);
    return out;
}

} // namespace coughnet
