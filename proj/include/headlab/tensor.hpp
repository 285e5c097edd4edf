#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "headlab/errors.hpp"
#include "headlab/rng.hpp"

namespace headlab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline void check_shape(const Shape& s) {
    if (s.empty()) throw DimensionError("tensor shape must have at least one extent");
    for (std::size_t e : s) {
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(s));
    }
}

// Dense row-major double tensor. `grad` is allocated iff requires_grad.
struct Tensor {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;

    static Tensor zeros(Shape s) {
        check_shape(s);
        Tensor t;
        t.values.assign(shape_numel(s), 0.0);
        t.shape = std::move(s);
        return t;
    }

    static Tensor from(Shape s, std::vector<double> v) {
        check_shape(s);
        if (shape_numel(s) != v.size()) {
            throw DimensionError("value count " + std::to_string(v.size()) +
                                 " does not match shape " + shape_str(s));
        }
        Tensor t;
        t.shape = std::move(s);
        t.values = std::move(v);
        return t;
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    std::size_t numel() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }

    void set_requires_grad(bool rg) {
        requires_grad = rg;
        if (rg) {
            grad.assign(values.size(), 0.0);
        } else {
            grad.clear();
        }
    }

    void zero_grad() {
        if (requires_grad) grad.assign(values.size(), 0.0);
    }

    double& at(std::size_t i, std::size_t j) {
        return values[i * shape[1] + j];
    }
    double at(std::size_t i, std::size_t j) const {
        return values[i * shape[1] + j];
    }
    double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return values[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return values[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
};

inline Tensor randn(Shape s, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(s));
    for (double& v : t.values) v = rng.normal();
    return t;
}

inline bool all_finite(const Tensor& t) {
    for (double v : t.values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// FNV-1a over the raw little-endian bytes of the values.
inline std::uint64_t content_digest(const Tensor& t) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : t.values) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        __builtin_memcpy(&bits, &v, sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffULL;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

}  // namespace headlab
