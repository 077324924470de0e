#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "statepipe/nn/matrix.hpp"
#include "statepipe/nn/rng.hpp"

namespace statepipe::nn {

// A trainable tensor and its gradient accumulator.
template <typename T>
struct Param {
    Matrix<T> value;
    Matrix<T> grad;

    Param() = default;
    Param(std::size_t rows, std::size_t cols) : value(rows, cols), grad(rows, cols) {}
    void zero_grad() { grad.zero(); }
};

template <typename T>
struct NamedParam {
    std::string name;
    Param<T>* param;
};

template <typename T>
struct ConstNamedParam {
    std::string name;
    const Param<T>* param;
};

// y = x W + b
template <typename T>
Matrix<T> linear_forward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b);

// Accumulates dW, db and returns dx.
template <typename T>
Matrix<T> linear_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& dy,
                          Matrix<T>& dw, Matrix<T>& db);

template <typename T>
Matrix<T> relu_forward(const Matrix<T>& x);
template <typename T>
Matrix<T> relu_backward(const Matrix<T>& x, const Matrix<T>& dy);

template <typename T>
T sigmoid(T z) noexcept;
template <typename T>
Matrix<T> sigmoid_forward(const Matrix<T>& z);
// dz = dp * p (1 - p), given the forward output p
template <typename T>
Matrix<T> sigmoid_backward(const Matrix<T>& p, const Matrix<T>& dp);

// Kernel-3 dilated convolution with zero "same" padding. W stacks the three
// taps row-wise: rows [0, C) multiply x[t - d], [C, 2C) x[t], [2C, 3C) x[t + d].
template <typename T>
Matrix<T> dilated_conv1d_forward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b,
                                 std::size_t dilation);
template <typename T>
Matrix<T> dilated_conv1d_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& dy,
                                  std::size_t dilation, Matrix<T>& dw, Matrix<T>& db);

// Inverted dropout. The mask holds the per-cell multiplier (0 or 1/(1-rate));
// an empty mask means identity.
template <typename T>
Matrix<T> dropout_forward(const Matrix<T>& x, double rate, Rng& rng, bool training,
                          std::vector<T>& mask);
template <typename T>
Matrix<T> dropout_backward(const Matrix<T>& dy, const std::vector<T>& mask);

// He-normal weights, zero bias.
template <typename T>
void he_init(Matrix<T>& w, std::size_t fan_in, Rng& rng, double scale = 1.0);

} // namespace statepipe::nn
