#pragma once

// Dense rank-1 / rank-2 tensors in double precision, row-major.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace msranker {

// Input/contract violations that should surface to the user (CLI exit 1).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<long long>(data.size()) != count(shape))
            throw ValidationError("tensor data length does not match shape " + shape_str(shape));
    }

    static long long count(const Shape& s) {
        long long n = 1;
        for (int d : s) {
            if (d <= 0) throw ValidationError("non-positive dimension in shape " + shape_str(s));
            n *= d;
        }
        return n;
    }

    static Tensor zeros(Shape s) {
        long long n = count(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
    }
    static Tensor vec(std::vector<double> v) {
        int n = static_cast<int>(v.size());
        return Tensor({n}, std::move(v));
    }
    static Tensor mat(int r, int c, std::vector<double> v) { return Tensor({r, c}, std::move(v)); }

    bool defined() const { return !shape.empty(); }
    int rank() const { return static_cast<int>(shape.size()); }
    long long size() const { return static_cast<long long>(data.size()); }

    int rows() const { return shape.at(0); }
    int cols() const { return rank() == 2 ? shape.at(1) : 1; }

    double& at(int i) { return data[static_cast<size_t>(i)]; }
    double at(int i) const { return data[static_cast<size_t>(i)]; }
    double& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
    double at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                              " vs " + shape_str(b.shape));
}

// 64-bit FNV-1a, used for state digests and file fingerprints.
inline uint64_t fnv1a64(const void* ptr, size_t len, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(ptr);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t digest(const Tensor& t) {
    uint64_t h = fnv1a64(t.shape.data(), t.shape.size() * sizeof(int));
    return fnv1a64(t.data.data(), t.data.size() * sizeof(double), h);
}

}  // namespace msranker
