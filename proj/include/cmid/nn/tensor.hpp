// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmid {

/// Raised for invalid configuration or shape mismatches (CLI exit code 1).
class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Raised for misuse of an API at runtime, e.g. stepping a finished episode.
class UsageError : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

/// Raised when a loss or activation becomes non-finite (CLI exit code 2).
class NumericError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace cmid

namespace cmid::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major array of doubles. Network code treats every tensor as a
/// matrix: the last dimension is the column count and all leading dimensions
/// fold into rows.
struct Tensor {
    Shape shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), values(shape_size(shape), fill) {}
    Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
        if (values.size() != shape_size(shape)) {
            throw ConfigError("tensor: " + std::to_string(values.size()) + " values for shape " +
                              shape_string(shape));
        }
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
        return Tensor({rows, cols}, fill);
    }
    static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }
    static Tensor row(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor({1, n}, std::move(v));
    }

    std::size_t size() const { return values.size(); }
    std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
    std::size_t rows() const {
        if (cols() == 0) return shape.size() > 1 ? shape.front() : 0;
        return size() / cols();
    }

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
    double item() const {
        if (size() != 1) throw UsageError("tensor: item() on tensor of shape " + shape_string(shape));
        return values[0];
    }

    bool all_finite() const {
        for (double v : values) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

}  // namespace cmid::nn
