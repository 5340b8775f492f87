#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "geodiff/errors.hpp"

namespace geodiff {

// Dense row-major tensor. The data length always equals the product of the
// shape extents.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s, T value = T(0))
        : shape(std::move(s)), data(count(shape), value) {}

    Tensor(std::vector<std::size_t> s, std::vector<T> values)
        : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != count(shape))
            throw DimensionError("tensor data length does not match its shape");
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t e : s) n *= e;
        return n;
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t extent(std::size_t i) const { return shape[i]; }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // rank-2 accessors (rows x cols)
    T& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    // rank-3 accessors (rows x cols x channels)
    T& at(std::size_t r, std::size_t c, std::size_t ch) {
        return data[(r * shape[1] + c) * shape[2] + ch];
    }
    const T& at(std::size_t r, std::size_t c, std::size_t ch) const {
        return data[(r * shape[1] + c) * shape[2] + ch];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
        return out;
    }
};

}  // namespace geodiff
