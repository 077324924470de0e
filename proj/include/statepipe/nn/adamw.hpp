#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "statepipe/nn/layers.hpp"

namespace statepipe::nn {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

template <typename T>
struct AdamWState {
    std::vector<Matrix<T>> m;
    std::vector<Matrix<T>> v;
    std::uint64_t step = 0;
};

// One step over every parameter using its accumulated gradient:
//   theta <- theta - lr * wd * theta
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
// Moments are created lazily on the first step.
template <typename T>
void adamw_step(std::span<Param<T>* const> params, AdamWState<T>& state, const AdamWConfig& cfg);

} // namespace statepipe::nn
