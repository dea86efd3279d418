#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cola/common.hpp"

namespace cola {

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major array. Value type; copying copies the payload.
template <class T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), T(0)) {}
    Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != data.size())
            throw shape_error("tensor payload size " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw shape_error("non-positive dimension in " + shape_str(s));
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor scalar(T v) { return Tensor({1}, {v}); }
    static Tensor row(std::vector<T> v) {
        int n = static_cast<int>(v.size());
        return Tensor({1, n}, std::move(v));
    }
    static Tensor vec(std::vector<T> v) {
        int n = static_cast<int>(v.size());
        return Tensor({n}, std::move(v));
    }

    size_t numel() const { return data.size(); }
    int ndim() const { return static_cast<int>(shape.size()); }
    bool is_scalar() const { return numel() == 1; }

    int rows() const {
        if (ndim() == 1) return 1;
        if (ndim() == 2) return shape[0];
        throw shape_error("rows() on tensor of shape " + shape_str(shape));
    }
    int cols() const {
        if (ndim() == 1) return shape[0];
        if (ndim() == 2) return shape[1];
        throw shape_error("cols() on tensor of shape " + shape_str(shape));
    }

    T& at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
    const T& at(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }
    T& operator[](size_t i) { return data[i]; }
    const T& operator[](size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

// c += a @ b, blocked ikj loop.
template <class T>
void matmul_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
    const int m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw shape_error("matmul inner dims disagree: " + shape_str(a.shape) + " x " +
                          shape_str(b.shape));
    const T* pa = a.data.data();
    const T* pb = b.data.data();
    T* pc = c.data.data();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const T av = pa[static_cast<size_t>(i) * k + p];
            if (av == T(0)) continue;
            const T* brow = pb + static_cast<size_t>(p) * n;
            T* crow = pc + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c += a @ b^T
template <class T>
void matmul_nt_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
    const int m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k)
        throw shape_error("matmul_nt inner dims disagree: " + shape_str(a.shape) + " x " +
                          shape_str(b.shape));
    for (int i = 0; i < m; ++i) {
        const T* arow = a.data.data() + static_cast<size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const T* brow = b.data.data() + static_cast<size_t>(j) * k;
            T acc = 0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c.data[static_cast<size_t>(i) * n + j] += acc;
        }
    }
}

// c += a^T @ b
template <class T>
void matmul_tn_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
    const int m = a.cols(), k = a.rows(), n = b.cols();
    if (b.rows() != k)
        throw shape_error("matmul_tn inner dims disagree: " + shape_str(a.shape) + " x " +
                          shape_str(b.shape));
    for (int p = 0; p < k; ++p) {
        const T* arow = a.data.data() + static_cast<size_t>(p) * m;
        const T* brow = b.data.data() + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const T av = arow[i];
            if (av == T(0)) continue;
            T* crow = c.data.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace cola
