#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lcl/error.hpp"

namespace lcl {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            s += ",";
        }
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

/// Dense row-major array with an optional gradient buffer.
///
/// Extents are always positive and the element count always equals the
/// product of the extents. There is no broadcasting: every operation that
/// combines tensors checks shapes explicitly.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
        check_extents();
        data_.assign(numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_extents();
        if (data_.size() != numel(shape_)) {
            throw ShapeError("tensor data has " + std::to_string(data_.size()) +
                             " values but shape " + to_string(shape_) + " needs " +
                             std::to_string(numel(shape_)));
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{0}); }
    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// Same data, new extents; the element count must not change.
    Tensor reshaped(Shape shape) const {
        if (numel(shape) != data_.size()) {
            throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool v) noexcept { requires_grad_ = v; }

    bool has_grad() const noexcept { return grad_.has_value(); }
    std::span<T> grad() { return ensure_grad(); }
    std::span<const T> grad() const {
        if (!grad_) {
            throw ContractError("tensor has no gradient buffer");
        }
        return *grad_;
    }
    std::span<T> ensure_grad() {
        if (!grad_) {
            grad_.emplace(data_.size(), T{0});
        }
        return *grad_;
    }
    void zero_grad() {
        if (grad_) {
            std::fill(grad_->begin(), grad_->end(), T{0});
        }
    }
    void clear_grad() { grad_.reset(); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        Tensor<U> t(shape_, std::move(out));
        t.set_requires_grad(requires_grad_);
        return t;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_extents() const {
        if (shape_.empty()) {
            throw ShapeError("tensor shape must have at least one extent");
        }
        for (auto e : shape_) {
            if (e == 0) {
                throw ShapeError("tensor extents must be positive, got " + to_string(shape_));
            }
        }
    }

    Shape shape_;
    std::vector<T> data_;
    bool requires_grad_ = false;
    std::optional<std::vector<T>> grad_;
};

inline void expect_shape(const Shape& actual, const Shape& expected, const char* what) {
    if (actual != expected) {
        throw ShapeError(std::string(what) + ": expected shape " + to_string(expected) + ", got " +
                         to_string(actual));
    }
}

inline void expect_rank(const Shape& actual, std::size_t rank, const char* what) {
    if (actual.size() != rank) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(actual));
    }
}

} // namespace lcl
