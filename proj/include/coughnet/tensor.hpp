#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "coughnet/error.hpp"

namespace coughnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s += (i ? "," : "") + std::to_string(shape[i]);
    }
    return s + ")";
}

/// Row-major n-dimensional array.
template <typename Real>
class Tensor {
public:
    using value_type = Real;

    Tensor() = default;
    explicit Tensor(Shape shape, Real fill = Real(0)) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
        check_dims();
    }
    Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_dims();
        if (data_.size() != shape_size(shape_)) {
            fail(ErrorCode::ShapeMismatch, "data length " + std::to_string(data_.size()) + " does not match shape " +
                                               shape_string(shape_));
        }
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }
    std::span<Real> values() { return data_; }
    std::span<const Real> values() const { return data_; }

    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    Real& at(std::size_t c, std::size_t h, std::size_t w) { return data_[(c * shape_[1] + h) * shape_[2] + w]; }
    Real at(std::size_t c, std::size_t h, std::size_t w) const {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape shape) const {
        return Tensor(std::move(shape), data_);
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
    }

    Tensor& operator+=(const Tensor& other) {
        if (other.shape_ != shape_) {
            fail(ErrorCode::ShapeMismatch, shape_string(shape_) + " += " + shape_string(other.shape_));
        }
        for (std::size_t i = 0; i < data_.size(); ++i) {
            data_[i] += other.data_[i];
        }
        return *this;
    }

    Tensor& operator*=(Real s) {
        for (auto& v : data_) {
            v *= s;
        }
        return *this;
    }

    bool operator==(const Tensor&) const = default;

private:
    void check_dims() const {
        for (auto d : shape_) {
            if (d == 0) {
                fail(ErrorCode::ShapeMismatch, "zero-sized dimension in " + shape_string(shape_));
            }
        }
    }

    Shape shape_;
    std::vector<Real> data_;
};

} // namespace coughnet
