#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <vector>

#include "voxseg/common.hpp"

namespace voxseg {

// Dense row-major N-d array. The last listed dimension is the fastest-moving
// one. Network activations use the shape (batch, channels, x, y, z).
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
        data_.assign(numel_of(shape_), T{});
    }

    Tensor(std::vector<std::size_t> shape, T value) : shape_(std::move(shape)) {
        data_.assign(numel_of(shape_), value);
    }

    static std::size_t numel_of(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T{}); }

    std::size_t idx2(std::size_t a, std::size_t b) const { return a * shape_[1] + b; }
    std::size_t idx4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
        return ((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d;
    }
    std::size_t idx5(std::size_t a, std::size_t b, std::size_t c, std::size_t d,
                     std::size_t e) const {
        return (((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d) * shape_[4] + e;
    }

    T& at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
        return data_[idx4(a, b, c, d)];
    }
    const T& at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
        return data_[idx4(a, b, c, d)];
    }
    T& at5(std::size_t a, std::size_t b, std::size_t c, std::size_t d, std::size_t e) {
        return data_[idx5(a, b, c, d, e)];
    }
    const T& at5(std::size_t a, std::size_t b, std::size_t c, std::size_t d,
                 std::size_t e) const {
        return data_[idx5(a, b, c, d, e)];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    std::string shape_string() const {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << ")";
        return os.str();
    }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
}

}  // namespace voxseg
