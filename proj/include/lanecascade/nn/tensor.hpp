#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "lanecascade/errors.hpp"

namespace lanecascade::nn {

// Dense float tensor, row-major. Convolutional layers use NCHW.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0f);
    }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    // NCHW accessors.
    float& at(int n, int c, int h, int w) {
        return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    float at(int n, int c, int h, int w) const {
        return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    float& at(int n, int k) { return data[static_cast<std::size_t>(n) * shape[1] + k]; }
    float at(int n, int k) const { return data[static_cast<std::size_t>(n) * shape[1] + k]; }

    void fill(float v) { std::fill(data.begin(), data.end(), v); }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
        return s + ")";
    }
};

inline void require_shape(const Tensor& t, const std::vector<int>& shape, const char* what) {
    if (t.shape != shape) {
        Tensor expected(shape);
        throw InvalidArgumentError(std::string(what) + ": expected shape " + expected.shape_str() + ", got " +
                                   t.shape_str());
    }
}

}  // namespace lanecascade::nn
