#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "statepipe/core/types.hpp"
#include "statepipe/nn/matrix.hpp"

namespace statepipe::nn {

// Targets in [0, 1] plus a validity mask of the same size (1 = valid).
template <typename T>
struct Targets {
    Matrix<T> y;
    std::vector<std::uint8_t> mask;

    std::size_t valid_count() const noexcept;
};

// Positive -> 1, Negative -> 0, Unassigned -> masked out.
template <typename T>
Targets<T> targets_from_labels(const PseudoLabelTimeline& labels);

// Soft targets, every cell valid.
template <typename T>
Targets<T> soft_targets(Matrix<T> y);

// Sum over valid cells of the binary cross-entropy of sigmoid(logits), in
// row-major order. When `grad` is non-null it receives (p - y) * grad_scale on
// valid cells and exactly zero elsewhere.
template <typename T>
T masked_bce_sum(const Matrix<T>& logits, const Targets<T>& targets, Matrix<T>* grad,
                 T grad_scale);

template <typename T>
struct LossResult {
    T loss{};
    Matrix<T> grad; // with respect to the logits
    std::size_t valid = 0;
};

// Mean over valid cells; all-invalid input gives loss 0 and a zero gradient.
template <typename T>
LossResult<T> masked_bce(const Matrix<T>& logits, const Targets<T>& targets);

} // namespace statepipe::nn
