#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coughnet/error.hpp"
#include "coughnet/tensor.hpp"

namespace coughnet::nn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename Real>
struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<Tensor<Real>> m;
    std::vector<Tensor<Real>> v;

    AdamState() = default;
    AdamState(AdamConfig cfg, std::span<const Tensor<Real>> params) : config(cfg) {
        m.reserve(params.size());
        v.reserve(params.size());
        for (const auto& p : params) {
            m.emplace_back(p.shape());
            v.emplace_back(p.shape());
        }
    }
};

/// One bias-corrected Adam update. Gradients are validated before anything is
/// mutated, so a rejected step leaves params and state untouched.
template <typename Real>
void adam_step(std::span<Tensor<Real>> params, std::span<const Tensor<Real>> grads, AdamState<Real>& state) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        fail(ErrorCode::ShapeMismatch, "adam: parameter, gradient and state counts differ");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].shape() != grads[i].shape() || params[i].shape() != state.m[i].shape()) {
            fail(ErrorCode::ShapeMismatch, "adam: shape mismatch at parameter " + std::to_string(i));
        }
        if (!grads[i].all_finite()) {
            fail(ErrorCode::NonFiniteGradient, "adam: non-finite gradient at parameter " + std::to_string(i));
        }
    }
    const auto& c = state.config;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double correct1 = 1.0 - std::pow(c.beta1, t);
    const double correct2 = 1.0 - std::pow(c.beta2, t);
    const auto b1 = static_cast<Real>(c.beta1);
    const auto b2 = static_cast<Real>(c.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Real* p = params[i].data();
        const Real* g = grads[i].data();
        Real* m = state.m[i].data();
        Real* v = state.v[i].data();
        for (std::size_t k = 0; k < params[i].size(); ++k) {
            m[k] = b1 * m[k] + (Real(1) - b1) * g[k];
            v[k] = b2 * v[k] + (Real(1) - b2) * g[k] * g[k];
            const double m_hat = static_cast<double>(m[k]) / correct1;
            const double v_hat = static_cast<double>(v[k]) / correct2;
            p[k] = static_cast<Real>(static_cast<double>(p[k]) - c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon));
        }
    }
}

} // namespace coughnet::nn
