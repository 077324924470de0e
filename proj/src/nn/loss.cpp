#include "statepipe/nn/loss.hpp"

#include <cmath>

#include "statepipe/nn/layers.hpp"

namespace statepipe::nn {

template <typename T>
std::size_t Targets<T>::valid_count() const noexcept {
    std::size_t n = 0;
    for (auto m : mask) n += m != 0;
    return n;
}

template <typename T>
Targets<T> targets_from_labels(const PseudoLabelTimeline& labels) {
    Targets<T> out{Matrix<T>(labels.num_frames(), labels.num_states()),
                   std::vector<std::uint8_t>(labels.num_frames() * labels.num_states(), 0)};
    for (std::size_t t = 0; t < labels.num_frames(); ++t)
        for (std::size_t k = 0; k < labels.num_states(); ++k) {
            const auto l = labels.at(t, k);
            if (l == TernaryLabel::Unassigned) continue;
            out.y(t, k) = l == TernaryLabel::Positive ? T(1) : T(0);
            out.mask[t * labels.num_states() + k] = 1;
        }
    return out;
}

template <typename T>
Targets<T> soft_targets(Matrix<T> y) {
    std::vector<std::uint8_t> mask(y.size(), 1);
    return {std::move(y), std::move(mask)};
}

template <typename T>
T masked_bce_sum(const Matrix<T>& logits, const Targets<T>& targets, Matrix<T>* grad,
                 T grad_scale) {
    require_shape(logits.same_shape(targets.y) && targets.mask.size() == logits.size(),
                  "masked bce", "logits " + shape_str(logits) + " vs targets " +
                                    shape_str(targets.y));
    if (grad) {
        require_shape(grad->same_shape(logits), "masked bce", "gradient buffer shape");
        grad->zero();
    }
    T total{};
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (!targets.mask[i]) continue;
        const T z = logits[i];
        const T y = targets.y[i];
        // -[y log s(z) + (1-y) log(1-s(z))] = max(z,0) - y z + log(1 + e^{-|z|})
        total += std::max(z, T{}) - y * z + std::log1p(std::exp(-std::abs(z)));
        if (grad) (*grad)[i] = (sigmoid(z) - y) * grad_scale;
    }
    return total;
}

template <typename T>
LossResult<T> masked_bce(const Matrix<T>& logits, const Targets<T>& targets) {
    LossResult<T> r;
    r.grad = Matrix<T>(logits.rows(), logits.cols());
    r.valid = targets.valid_count();
    if (r.valid == 0) {
        require_shape(logits.same_shape(targets.y) && targets.mask.size() == logits.size(),
                      "masked bce", "logits " + shape_str(logits) + " vs targets " +
                                        shape_str(targets.y));
        return r;
    }
    const T inv = T(1) / static_cast<T>(r.valid);
    r.loss = masked_bce_sum(logits, targets, &r.grad, inv) * inv;
    return r;
}

template struct Targets<float>;
template struct Targets<double>;
template Targets<float> targets_from_labels(const PseudoLabelTimeline&);
template Targets<double> targets_from_labels(const PseudoLabelTimeline&);
template Targets<float> soft_targets(Matrix<float>);
template Targets<double> soft_targets(Matrix<double>);
template float masked_bce_sum(const Matrix<float>&, const Targets<float>&, Matrix<float>*, float);
template double masked_bce_sum(const Matrix<double>&, const Targets<double>&, Matrix<double>*,
                               double);
template LossResult<float> masked_bce(const Matrix<float>&, const Targets<float>&);
template LossResult<double> masked_bce(const Matrix<double>&, const Targets<double>&);

} // namespace statepipe::nn
