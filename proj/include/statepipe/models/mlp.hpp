#pragma once

#include <cstddef>
#include <vector>

#include "statepipe/nn/layers.hpp"
#include "statepipe/nn/rng.hpp"

namespace statepipe::models {

using nn::ConstNamedParam;
using nn::Matrix;
using nn::NamedParam;
using nn::Param;

struct MlpConfig {
    std::size_t input_dim = 0;
    std::size_t hidden = 512;
    std::size_t num_states = 0;

    void validate() const;
    friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

// Frame-wise classifier: linear D->H, ReLU, linear H->K. Outputs are logits;
// apply the sigmoid for probabilities.
template <typename T>
class Mlp {
public:
    struct Cache {
        const Matrix<T>* x = nullptr; // must outlive the cache
        Matrix<T> h_pre;
        Matrix<T> h;
    };

    Mlp() = default;
    Mlp(const MlpConfig& cfg, nn::Rng& rng);

    const MlpConfig& config() const noexcept { return cfg_; }

    Matrix<T> forward(const Matrix<T>& x, Cache* cache = nullptr) const;
    Matrix<T> predict(const Matrix<T>& x) const;
    // Accumulates parameter gradients from d(loss)/d(logits).
    void backward(const Cache& cache, const Matrix<T>& dlogits);

    std::vector<NamedParam<T>> parameters();
    std::vector<ConstNamedParam<T>> parameters() const;
    void zero_grad();

    Param<T> hidden_w, hidden_b, out_w, out_b;

private:
    MlpConfig cfg_;
};

} // namespace statepipe::models
