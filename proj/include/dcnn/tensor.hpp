#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace dcnn {

using Shape = std::vector<std::size_t>;

namespace detail {

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

inline std::size_t shape_product(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline void validate_shape(const Shape& s) {
    if (s.empty()) throw ShapeMismatch("tensor shape must have at least one dimension");
    for (auto d : s) {
        if (d == 0) throw ShapeMismatch("tensor dimensions must be positive, got " + shape_str(s));
    }
}

// c (m,n) += a (m,k) * b (k,n). Rows of all three are contiguous. Zero
// multiplicands are skipped; with finite operands this is bitwise identical
// to the full sum and much faster on sparse activations (post-ReLU maps,
// zero-padded image borders).
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c (k,n) += a^T * b for a (m,k), b (m,n).
template <typename T>
void gemm_at_b_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < m; ++p) {
        const T* arow = a + p * k;
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < k; ++i) {
            const T av = arow[i];
            if (av == T(0)) continue;
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c (m,p) += a (m,n) * b^T for b (p,n).
template <typename T>
void gemm_a_bt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * n;
        T* crow = c + i * p;
        for (std::size_t j = 0; j < p; ++j) {
            const T* brow = b + j * n;
            T acc = T(0);
            for (std::size_t q = 0; q < n; ++q) acc += arow[q] * brow[q];
            crow[j] += acc;
        }
    }
}

} // namespace detail

// Dense row-major N-dimensional array (last axis fastest). Carrier of all
// activations, parameters and gradients. Treated as an immutable value once
// published: public operations return new tensors.
template <typename T>
class Tensor {
  public:
    Tensor() = default;

    // Checked construction from explicit values (row-major order).
    Tensor(Shape shape, std::vector<T> values)
        : shape_(std::move(shape)), data_(std::move(values)) {
        detail::validate_shape(shape_);
        if (detail::shape_product(shape_) != data_.size()) {
            throw ShapeMismatch("shape " + detail::shape_str(shape_) + " needs " +
                                std::to_string(detail::shape_product(shape_)) +
                                " values, got " + std::to_string(data_.size()));
        }
        for (const T& v : data_) {
            if (!std::isfinite(v)) throw NonFinite("tensor value is not finite");
        }
    }

    static Tensor zeros(Shape shape) {
        detail::validate_shape(shape);
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_.assign(detail::shape_product(t.shape_), T(0));
        return t;
    }

    static Tensor full(Shape shape, T value) {
        Tensor t = zeros(std::move(shape));
        for (T& v : t.data_) v = value;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<const T> data() const { return data_; }
    std::span<T> data() { return data_; }

    T operator[](std::size_t i) const { return data_[i]; }
    T& operator[](std::size_t i) { return data_[i]; }

    T at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    T at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    T& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    T at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    // Same data, new shape metadata; element count must not change.
    Tensor reshape(Shape new_shape) const& {
        Tensor copy = *this;
        return std::move(copy).reshape(std::move(new_shape));
    }

    Tensor reshape(Shape new_shape) && {
        detail::validate_shape(new_shape);
        if (detail::shape_product(new_shape) != data_.size()) {
            throw ShapeMismatch("cannot reshape " + detail::shape_str(shape_) + " to " +
                                detail::shape_str(new_shape) + ": element count differs");
        }
        shape_ = std::move(new_shape);
        return std::move(*this);
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

  private:
    Shape shape_;
    std::vector<T> data_;
};

// Standard matrix product of two rank-2 tensors.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeMismatch("matmul needs rank-2 tensors, got " + detail::shape_str(a.shape()) +
                            " and " + detail::shape_str(b.shape()));
    }
    if (a.dim(1) != b.dim(0)) {
        throw ShapeMismatch("matmul inner dimensions disagree: " + detail::shape_str(a.shape()) +
                            " x " + detail::shape_str(b.shape()));
    }
    Tensor<T> c = Tensor<T>::zeros({a.dim(0), b.dim(1)});
    detail::gemm_acc(a.data().data(), b.data().data(), c.data().data(), a.dim(0), a.dim(1), b.dim(1));
    return c;
}

} // namespace dcnn
