// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "harllm/error.hpp"

namespace harllm {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

/// Dense row-major tensor. `float` for training, `double` for gradient checks.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
        check_extents();
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_extents();
        if (data_.size() != shape_numel(shape_))
            throw DimensionError("tensor of shape " + shape_str(shape_) + " needs " +
                                 std::to_string(shape_numel(shape_)) + " values, got " +
                                 std::to_string(data_.size()));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    /// Extent counted from the last axis: `dim_back(0)` is the innermost.
    std::size_t dim_back(std::size_t i) const { return shape_.at(shape_.size() - 1 - i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> span() noexcept { return data_; }
    std::span<const T> span() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
    const T& at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool flag) noexcept { requires_grad_ = flag; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    /// Same values, new shape with equal element count.
    Tensor reshaped(Shape shape) const& {
        Tensor out = *this;
        out.reshape(std::move(shape));
        return out;
    }
    Tensor reshaped(Shape shape) && {
        reshape(std::move(shape));
        return std::move(*this);
    }
    void reshape(Shape shape) {
        if (shape_numel(shape) != data_.size())
            throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        shape_ = std::move(shape);
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        Tensor<U> t(shape_, std::move(out));
        t.set_requires_grad(requires_grad_);
        return t;
    }

    Tensor& operator+=(const Tensor& other) {
        require_same_shape(other, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    void require_same_shape(const Tensor& other, const char* op) const {
        if (shape_ != other.shape_)
            throw DimensionError(std::string(op) + ": shape " + shape_str(shape_) + " vs " +
                                 shape_str(other.shape_));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_extents() const {
        for (auto e : shape_)
            if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape_));
    }

    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != shape_.size())
            throw DimensionError("index rank " + std::to_string(idx.size()) + " vs tensor " +
                                 shape_str(shape_));
        std::size_t off = 0, d = 0;
        for (auto i : idx) {
            if (i >= shape_[d]) throw IndexError("index out of range for " + shape_str(shape_));
            off = off * shape_[d++] + i;
        }
        return off;
    }

    Shape shape_;
    std::vector<T> data_;
    bool requires_grad_ = false;
};

/// Named parameter tensor. Frozen parameters never allocate a gradient.
template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = false;

    Param() = default;
    Param(std::string n, Tensor<T> v, bool train) : name(std::move(n)), value(std::move(v)), trainable(train) {
        value.set_requires_grad(train);
        if (train) grad = Tensor<T>::zeros_like(value);
    }

    void zero_grad() {
        if (trainable) grad.fill(T{0});
    }
};

} // namespace harllm
