#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "rotlab/errors.hpp"

namespace rotlab {

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Dense row-major tensor of doubles. All graph arithmetic runs in 64-bit;
// 32-bit training mode quantizes values through float at defined points
// (see Optimizer) instead of keeping a second storage type.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, double fill = 0.0)
        : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), fill) {}
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s), 0.0); }
    static Tensor full(std::vector<int> s, double v) { return Tensor(std::move(s), v); }
    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    // Row-major multi-index accessors for tests and small hand-written math.
    double& at(std::initializer_list<int> idx) { return data[static_cast<std::size_t>(offset(idx))]; }
    double at(std::initializer_list<int> idx) const { return data[static_cast<std::size_t>(offset(idx))]; }

    std::int64_t offset(std::initializer_list<int> idx) const;

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

bool all_finite(const Tensor& t);
void require_finite(const Tensor& t, const char* what);

// Round every value to the nearest float. Used by the 32-bit precision mode.
void quantize_f32(Tensor& t);

double dot(const Tensor& a, const Tensor& b);

}  // namespace rotlab
