#include "rotlab/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace rotlab {

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::int64_t Tensor::offset(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != ndim()) {
        throw ShapeError("index rank " + std::to_string(idx.size()) + " vs tensor rank " +
                         std::to_string(ndim()));
    }
    std::int64_t off = 0;
    int k = 0;
    for (int i : idx) {
        const int extent = shape[static_cast<std::size_t>(k)];
        if (i < 0 || i >= extent) {
            throw ShapeError("index " + std::to_string(i) + " out of range for axis " +
                             std::to_string(k) + " of " + shape_str(shape));
        }
        off = off * extent + i;
        ++k;
    }
    return off;
}

bool all_finite(const Tensor& t) {
    return std::all_of(t.data.begin(), t.data.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Tensor& t, const char* what) {
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        if (!std::isfinite(t.data[i])) {
            throw NonFiniteError(std::string(what) + ": non-finite value at flat index " +
                                 std::to_string(i));
        }
    }
}

void quantize_f32(Tensor& t) {
    for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) {
        throw ShapeError("dot: size mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

}  // namespace rotlab
