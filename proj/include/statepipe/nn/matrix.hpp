#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "statepipe/core/error.hpp"

namespace statepipe::nn {

// Dense row-major matrix. Training runs in float, gradient checks in double.
template <typename T>
class Matrix {
public:
    using value_type = T;

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows * cols)
            throw ShapeError("matrix data holds " + std::to_string(data_.size()) + " values for " +
                             std::to_string(rows) + "x" + std::to_string(cols));
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::vector<T>& values() noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T{}); }

    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    template <typename U>
    Matrix<U> cast() const {
        Matrix<U> out(rows_, cols_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

inline void require_shape(bool ok, const char* op, const std::string& detail) {
    if (!ok) throw ShapeError(std::string(op) + ": " + detail);
}

template <typename T>
std::string shape_str(const Matrix<T>& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// C[r0 + t, :] += A[a0 + t, :] * B for t in [0, n)
template <typename T>
void gemm_rows_acc(const Matrix<T>& a, std::size_t a0, const Matrix<T>& b, std::size_t b0,
                   std::size_t k, Matrix<T>& c, std::size_t c0, std::size_t n) {
    const std::size_t m = c.cols();
    for (std::size_t t = 0; t < n; ++t) {
        const T* arow = a.data() + (a0 + t) * a.cols();
        T* crow = c.data() + (c0 + t) * m;
        for (std::size_t i = 0; i < k; ++i) {
            const T av = arow[i];
            if (av == T{}) continue;
            const T* brow = b.data() + (b0 + i) * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[c0 + t, :] += A[a0 + t, :] * B[b0 .. b0+k, :]^T   (C cols = k)
template <typename T>
void gemm_rows_acc_bt(const Matrix<T>& a, std::size_t a0, const Matrix<T>& b, std::size_t b0,
                      std::size_t k, Matrix<T>& c, std::size_t c0, std::size_t n) {
    const std::size_t m = a.cols();
    for (std::size_t t = 0; t < n; ++t) {
        const T* arow = a.data() + (a0 + t) * m;
        T* crow = c.data() + (c0 + t) * c.cols();
        for (std::size_t i = 0; i < k; ++i) {
            const T* brow = b.data() + (b0 + i) * m;
            T acc{};
            for (std::size_t j = 0; j < m; ++j) acc += arow[j] * brow[j];
            crow[i] += acc;
        }
    }
}

// C[c0 .. c0+k, :] += A[a0 .. a0+n, 0..k]^T * B[b0 .. b0+n, :]
template <typename T>
void gemm_at_rows_acc(const Matrix<T>& a, std::size_t a0, const Matrix<T>& b, std::size_t b0,
                      std::size_t k, Matrix<T>& c, std::size_t c0, std::size_t n) {
    const std::size_t m = b.cols();
    for (std::size_t t = 0; t < n; ++t) {
        const T* arow = a.data() + (a0 + t) * a.cols();
        const T* brow = b.data() + (b0 + t) * m;
        for (std::size_t i = 0; i < k; ++i) {
            const T av = arow[i];
            if (av == T{}) continue;
            T* crow = c.data() + (c0 + i) * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

} // namespace statepipe::nn
