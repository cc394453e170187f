#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace stemlink::numerics {

inline std::size_t shape_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major tensor. `g` is the gradient buffer; it stays empty until
// something (a parameter registration, a backward pass) needs it.
template <typename S>
struct Tensor {
    std::vector<int> shape;
    std::vector<S> v;
    std::vector<S> g;

    Tensor() = default;
    explicit Tensor(std::vector<int> sh) : shape(std::move(sh)), v(shape_count(shape), S(0)) {}
    Tensor(std::vector<int> sh, std::vector<S> values) : shape(std::move(sh)), v(std::move(values)) {
        if (v.size() != shape_count(shape))
            throw std::invalid_argument("tensor value count does not match shape " + shape_str(shape));
    }

    std::size_t size() const { return v.size(); }
    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() < 2 ? (shape.empty() ? 0 : 1) : shape[1]; }

    S* data() { return v.data(); }
    const S* data() const { return v.data(); }

    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), S(0));
    }
    void zero_grad() { g.assign(v.size(), S(0)); }

    bool values_finite() const {
        for (S x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }
    bool grad_finite() const {
        for (S x : g)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <typename T>
    Tensor<T> cast() const {
        Tensor<T> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<T>(v[i]);
        return out;
    }
};

inline void require_same_shape(const std::vector<int>& a, const std::vector<int>& b, const char* op) {
    if (a != b)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

} // namespace stemlink::numerics
