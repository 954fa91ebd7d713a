#pragma once

// Forward and backward passes for the fixed layer set used by both networks.
// Backward functions come in two flavours: *_backward_into accumulates
// parameter gradients into caller-owned tensors (used by batch training), and
// *_backward returns fresh gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "coughnet/error.hpp"
#include "coughnet/rng.hpp"
#include "coughnet/tensor.hpp"

namespace coughnet::nn {

enum class Mode { Train, Infer };

inline std::size_t conv_output_dim(std::size_t in, std::size_t kernel, std::size_t stride) {
    return (in - kernel) / stride + 1;
}

// ---------------------------------------------------------------- conv2d

template <typename Real>
struct ConvGrads {
    Tensor<Real> input;
    Tensor<Real> weights;
    Tensor<Real> bias;
};

namespace detail {

template <typename Real>
void check_conv(const Tensor<Real>& in, const Tensor<Real>& w, const Tensor<Real>& b, std::size_t stride) {
    if (in.rank() != 3 || w.rank() != 4 || b.rank() != 1) {
        fail(ErrorCode::ShapeMismatch, "conv2d expects C×H×W input, F×C×K×K weights, F bias");
    }
    if (w.dim(1) != in.dim(0) || w.dim(2) != w.dim(3) || b.dim(0) != w.dim(0)) {
        fail(ErrorCode::ShapeMismatch, "conv2d weights " + shape_string(w.shape()) + " incompatible with input " +
                                           shape_string(in.shape()) + " / bias " + shape_string(b.shape()));
    }
    if (stride < 1) {
        fail(ErrorCode::ShapeMismatch, "conv2d stride must be >= 1");
    }
    if (in.dim(1) < w.dim(2) || in.dim(2) < w.dim(3)) {
        fail(ErrorCode::ShapeMismatch, "conv2d input " + shape_string(in.shape()) + " smaller than kernel");
    }
}

} // namespace detail

/// Valid (unpadded) cross-correlation.
template <typename Real>
Tensor<Real> conv2d_forward(const Tensor<Real>& in, const Tensor<Real>& w, const Tensor<Real>& b,
                            std::size_t stride = 1) {
    detail::check_conv(in, w, b, stride);
    const std::size_t C = in.dim(0), H = in.dim(1), W = in.dim(2);
    const std::size_t F = w.dim(0), K = w.dim(2);
    const std::size_t Ho = conv_output_dim(H, K, stride), Wo = conv_output_dim(W, K, stride);
    Tensor<Real> out({F, Ho, Wo});
    for (std::size_t f = 0; f < F; ++f) {
        Real* plane = out.data() + f * Ho * Wo;
        std::fill(plane, plane + Ho * Wo, b[f]);
        for (std::size_t c = 0; c < C; ++c) {
            const Real* src = in.data() + c * H * W;
            for (std::size_t u = 0; u < K; ++u) {
                for (std::size_t v = 0; v < K; ++v) {
                    const Real wv = w[((f * C + c) * K + u) * K + v];
                    for (std::size_t i = 0; i < Ho; ++i) {
                        const Real* row = src + (i * stride + u) * W + v;
                        Real* dst = plane + i * Wo;
                        if (stride == 1) {
                            for (std::size_t j = 0; j < Wo; ++j) {
                                dst[j] += wv * row[j];
                            }
                        } else {
                            for (std::size_t j = 0; j < Wo; ++j) {
                                dst[j] += wv * row[j * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

/// Adds d(weights) and d(bias) into dw/db; returns d(input) when requested
/// (an empty tensor otherwise).
template <typename Real>
Tensor<Real> conv2d_backward_into(const Tensor<Real>& in, const Tensor<Real>& w, std::size_t stride,
                                  const Tensor<Real>& dout, Tensor<Real>& dw, Tensor<Real>& db,
                                  bool need_input_grad = true) {
    const std::size_t C = in.dim(0), H = in.dim(1), W = in.dim(2);
    const std::size_t F = w.dim(0), K = w.dim(2);
    const std::size_t Ho = conv_output_dim(H, K, stride), Wo = conv_output_dim(W, K, stride);
    if (dout.shape() != Shape{F, Ho, Wo} || dw.shape() != w.shape() || db.shape() != Shape{F}) {
        fail(ErrorCode::ShapeMismatch, "conv2d backward: upstream gradient " + shape_string(dout.shape()) +
                                           " expected " + shape_string({F, Ho, Wo}));
    }
    Tensor<Real> din;
    if (need_input_grad) {
        din = Tensor<Real>(in.shape());
    }
    for (std::size_t f = 0; f < F; ++f) {
        const Real* g = dout.data() + f * Ho * Wo;
        Real bias_acc = 0;
        for (std::size_t k = 0; k < Ho * Wo; ++k) {
            bias_acc += g[k];
        }
        db[f] += bias_acc;
        for (std::size_t c = 0; c < C; ++c) {
            const Real* src = in.data() + c * H * W;
            Real* dsrc = need_input_grad ? din.data() + c * H * W : nullptr;
            for (std::size_t u = 0; u < K; ++u) {
                for (std::size_t v = 0; v < K; ++v) {
                    const std::size_t widx = ((f * C + c) * K + u) * K + v;
                    const Real wv = w[widx];
                    Real acc = 0;
                    for (std::size_t i = 0; i < Ho; ++i) {
                        const Real* row = src + (i * stride + u) * W + v;
                        const Real* grow = g + i * Wo;
                        if (stride == 1) {
                            for (std::size_t j = 0; j < Wo; ++j) {
                                acc += grow[j] * row[j];
                            }
                            if (dsrc) {
                                Real* drow = dsrc + (i + u) * W + v;
                                for (std::size_t j = 0; j < Wo; ++j) {
                                    drow[j] += grow[j] * wv;
                                }
                            }
                        } else {
                            for (std::size_t j = 0; j < Wo; ++j) {
                                acc += grow[j] * row[j * stride];
                            }
                            if (dsrc) {
                                Real* drow = dsrc + (i * stride + u) * W + v;
                                for (std::size_t j = 0; j < Wo; ++j) {
                                    drow[j * stride] += grow[j] * wv;
                                }
                            }
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    return din;
}

template <typename Real>
ConvGrads<Real> conv2d_backward(const Tensor<Real>& in, const Tensor<Real>& w, std::size_t stride,
                                const Tensor<Real>& dout) {
    ConvGrads<Real> g{Tensor<Real>(), Tensor<Real>(w.shape()), Tensor<Real>({w.dim(0)})};
    g.input = conv2d_backward_into(in, w, stride, dout, g.weights, g.bias);
    return g;
}

// ---------------------------------------------------------------- maxpool2d

template <typename Real>
struct PoolResult {
    Tensor<Real> output;
    std::vector<std::uint32_t> argmax; // flat input index per output cell
};

/// Non-overlapping pool×pool max pooling; trailing rows/columns that do not
/// fill a window are dropped. Ties go to the first element in row-major order.
template <typename Real>
PoolResult<Real> maxpool2d_forward(const Tensor<Real>& in, std::size_t pool = 2) {
    if (in.rank() != 3 || pool < 1 || in.dim(1) < pool || in.dim(2) < pool) {
        fail(ErrorCode::ShapeMismatch, "maxpool2d needs C×H×W input with H,W >= pool, got " + shape_string(in.shape()));
    }
    const std::size_t C = in.dim(0), H = in.dim(1), W = in.dim(2);
    const std::size_t Ho = H / pool, Wo = W / pool;
    PoolResult<Real> r{Tensor<Real>({C, Ho, Wo}), std::vector<std::uint32_t>(C * Ho * Wo)};
    std::size_t o = 0;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < Ho; ++i) {
            for (std::size_t j = 0; j < Wo; ++j, ++o) {
                std::size_t best = (c * H + i * pool) * W + j * pool;
                Real best_v = in[best];
                for (std::size_t u = 0; u < pool; ++u) {
                    for (std::size_t v = 0; v < pool; ++v) {
                        const std::size_t idx = (c * H + i * pool + u) * W + j * pool + v;
                        if (in[idx] > best_v) {
                            best_v = in[idx];
                            best = idx;
                        }
                    }
                }
                r.output[o] = best_v;
                r.argmax[o] = static_cast<std::uint32_t>(best);
            }
        }
    }
    return r;
}

template <typename Real>
Tensor<Real> maxpool2d_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                                const Tensor<Real>& dout) {
    if (dout.size() != argmax.size()) {
        fail(ErrorCode::ShapeMismatch, "maxpool2d backward: upstream gradient size mismatch");
    }
    Tensor<Real> din(input_shape);
    for (std::size_t o = 0; o < argmax.size(); ++o) {
        din[argmax[o]] += dout[o];
    }
    return din;
}

// ---------------------------------------------------------------- dense

template <typename Real>
struct DenseGrads {
    Tensor<Real> input;
    Tensor<Real> weights;
    Tensor<Real> bias;
};

/// out = W·in + b; `in` of any shape is read as a flat vector.
template <typename Real>
Tensor<Real> dense_forward(const Tensor<Real>& in, const Tensor<Real>& w, const Tensor<Real>& b) {
    if (w.rank() != 2 || b.rank() != 1 || w.dim(1) != in.size() || w.dim(0) != b.dim(0)) {
        fail(ErrorCode::ShapeMismatch, "dense weights " + shape_string(w.shape()) + " incompatible with input of " +
                                           std::to_string(in.size()) + " values");
    }
    const std::size_t M = w.dim(0), N = w.dim(1);
    Tensor<Real> out({M});
    for (std::size_t m = 0; m < M; ++m) {
        const Real* row = w.data() + m * N;
        Real acc = 0;
        for (std::size_t n = 0; n < N; ++n) {
            acc += row[n] * in[n];
        }
        out[m] = acc + b[m];
    }
    return out;
}

template <typename Real>
Tensor<Real> dense_backward_into(const Tensor<Real>& in, const Tensor<Real>& w, const Tensor<Real>& dout,
                                 Tensor<Real>& dw, Tensor<Real>& db, bool need_input_grad = true) {
    const std::size_t M = w.dim(0), N = w.dim(1);
    if (dout.size() != M || dw.shape() != w.shape() || db.size() != M) {
        fail(ErrorCode::ShapeMismatch, "dense backward: gradient shapes disagree with weights " +
                                           shape_string(w.shape()));
    }
    Tensor<Real> din;
    if (need_input_grad) {
        din = Tensor<Real>(in.shape());
    }
    for (std::size_t m = 0; m < M; ++m) {
        const Real g = dout[m];
        db[m] += g;
        Real* drow = dw.data() + m * N;
        for (std::size_t n = 0; n < N; ++n) {
            drow[n] += g * in[n];
        }
        if (need_input_grad) {
            const Real* row = w.data() + m * N;
            for (std::size_t n = 0; n < N; ++n) {
                din[n] += g * row[n];
            }
        }
    }
    return din;
}

template <typename Real>
DenseGrads<Real> dense_backward(const Tensor<Real>& in, const Tensor<Real>& w, const Tensor<Real>& dout) {
    DenseGrads<Real> g{Tensor<Real>(), Tensor<Real>(w.shape()), Tensor<Real>({w.dim(0)})};
    g.input = dense_backward_into(in, w, dout, g.weights, g.bias);
    return g;
}

// ---------------------------------------------------------------- relu

template <typename Real>
Tensor<Real> relu_forward(Tensor<Real> x) {
    for (auto& v : x.values()) {
        v = v > Real(0) ? v : Real(0);
    }
    return x;
}

/// Gradient at exactly zero is zero.
template <typename Real>
Tensor<Real> relu_backward(const Tensor<Real>& x, Tensor<Real> dout) {
    if (x.size() != dout.size()) {
        fail(ErrorCode::ShapeMismatch, "relu backward size mismatch");
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > Real(0))) {
            dout[i] = Real(0);
        }
    }
    return dout;
}

// ---------------------------------------------------------------- dropout

template <typename Real>
struct DropoutResult {
    Tensor<Real> output;
    std::vector<Real> scale; // 0 or 1/(1-rate) per element; empty when identity
};

/// Inverted dropout. Identity in inference mode or at rate 0.
template <typename Real>
DropoutResult<Real> dropout_forward(const Tensor<Real>& x, double rate, Mode mode, Rng* rng) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        fail(ErrorCode::InvalidRate, "dropout rate " + std::to_string(rate) + " outside [0,1)");
    }
    if (mode == Mode::Infer || rate == 0.0) {
        return {x, {}};
    }
    if (rng == nullptr) {
        fail(ErrorCode::InvalidArgument, "training-mode dropout needs a random generator");
    }
    const auto keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
    DropoutResult<Real> r{x, std::vector<Real>(x.size())};
    for (std::size_t i = 0; i < x.size(); ++i) {
        const Real s = uniform01(*rng) < rate ? Real(0) : keep_scale;
        r.scale[i] = s;
        r.output[i] *= s;
    }
    return r;
}

template <typename Real>
Tensor<Real> dropout_backward(const std::vector<Real>& scale, Tensor<Real> dout) {
    if (scale.empty()) {
        return dout;
    }
    if (scale.size() != dout.size()) {
        fail(ErrorCode::ShapeMismatch, "dropout backward size mismatch");
    }
    for (std::size_t i = 0; i < dout.size(); ++i) {
        dout[i] *= scale[i];
    }
    return dout;
}

// ---------------------------------------------------------------- softmax / loss

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& logits) {
    const Real peak = *std::max_element(logits.values().begin(), logits.values().end());
    Tensor<Real> probs(logits.shape());
    Real sum = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - peak);
        sum += probs[i];
    }
    probs *= Real(1) / sum;
    return probs;
}

template <typename Real>
struct LossResult {
    Tensor<Real> probs;
    double loss = 0.0;
    Tensor<Real> dlogits;
};

/// Softmax + negative log-likelihood; d(logits) = probs - onehot(label).
template <typename Real>
LossResult<Real> softmax_cross_entropy(const Tensor<Real>& logits, int label) {
    const auto k = static_cast<int>(logits.size());
    if (k < 2) {
        fail(ErrorCode::ShapeMismatch, "softmax cross-entropy needs at least 2 logits");
    }
    if (label < 0 || label >= k) {
        fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(label) + " outside [0," + std::to_string(k) + ")");
    }
    LossResult<Real> r;
    r.probs = softmax(logits);
    // log-sum-exp form keeps the loss accurate when probs[label] underflows.
    const double peak = static_cast<double>(*std::max_element(logits.values().begin(), logits.values().end()));
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        sum += std::exp(static_cast<double>(logits[i]) - peak);
    }
    r.loss = peak + std::log(sum) - static_cast<double>(logits[static_cast<std::size_t>(label)]);
    r.dlogits = r.probs;
    r.dlogits[static_cast<std::size_t>(label)] -= Real(1);
    return r;
}

} // namespace coughnet::nn
