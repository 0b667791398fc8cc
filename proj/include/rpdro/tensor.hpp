#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rpdro {

// Dense row-major array of 64-bit floats. Rank 0 (empty shape) is a scalar.
using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

struct Tensor {
    Shape shape;
    std::vector<double> values;

    Tensor() : values(1, 0.0) {}  // scalar zero

    explicit Tensor(Shape s, double fill = 0.0)
        : shape(std::move(s)), values(shape_numel(shape), fill) {}

    Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
        if (values.size() != shape_numel(shape)) {
            throw std::invalid_argument("Tensor: " + std::to_string(values.size()) +
                                        " values do not fill shape " + shape_str(shape));
        }
    }

    static Tensor scalar(double v) {
        Tensor t;
        t.values[0] = v;
        return t;
    }

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape); }

    std::size_t numel() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }
    bool is_scalar() const { return shape.empty(); }

    // rank-2 accessors
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }

    double& at(std::size_t i) { return values[i]; }
    double at(std::size_t i) const { return values[i]; }
    double& at(std::size_t i, std::size_t j) { return values[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return values[i * shape[1] + j]; }

    double item() const {
        if (!is_scalar()) {
            throw std::invalid_argument("Tensor::item on non-scalar shape " + shape_str(shape));
        }
        return values[0];
    }

    bool all_finite() const {
        for (double v : values) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

// Compensated (Kahan) summation; keeps normalization identities tight.
inline double kahan_sum(const std::vector<double>& xs) {
    double sum = 0.0, c = 0.0;
    for (double x : xs) {
        double y = x - c;
        double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    return sum;
}

// x*log(x) with the 0*log(0) := 0 convention.
inline double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

}  // namespace rpdro
