#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "statepipe/models/mlp.hpp"

namespace statepipe::models {

struct TcnConfig {
    std::size_t input_dim = 0;
    std::size_t num_states = 0;
    std::size_t channels = 512;
    std::size_t layers = 10; // dilation 2^l for layer l
    std::size_t stages = 4;
    double dropout = 0.5;

    void validate() const;
    // Frames either side that can reach one stage-1 output.
    std::size_t receptive_radius() const noexcept;
    friend bool operator==(const TcnConfig&, const TcnConfig&) = default;
};

// Multi-stage dilated residual TCN. Stage 1 projects the features D->C; later
// stages project the previous stage's sigmoid output K->C. Each residual layer
// computes x + dropout(W2 relu(conv_d(x))) and each stage ends in a C->K head.
template <typename T>
class Tcn {
public:
    struct Layer {
        Param<T> conv_w, conv_b, pw_w, pw_b;
        std::size_t dilation = 1;
    };
    struct Stage {
        Param<T> in_w, in_b;
        std::vector<Layer> layers;
        Param<T> out_w, out_b;
    };

    struct LayerCache {
        Matrix<T> x, h, r;
        std::vector<T> mask;
    };
    struct StageCache {
        Matrix<T> input; // features for stage 1, probabilities afterwards
        std::vector<LayerCache> layers;
        Matrix<T> last;
    };
    struct Cache {
        std::vector<StageCache> stages;
    };

    struct ForwardOptions {
        bool training = false;
        std::uint64_t dropout_seed = 0;
    };

    Tcn() = default;
    Tcn(const TcnConfig& cfg, nn::Rng& rng);

    const TcnConfig& config() const noexcept { return cfg_; }

    // Per-stage logits, first to last.
    std::vector<Matrix<T>> forward(const Matrix<T>& x, Cache* cache = nullptr,
                                   ForwardOptions opt = {}) const;
    // Final-stage probabilities in evaluation mode.
    Matrix<T> predict(const Matrix<T>& x) const;
    // Accumulates parameter gradients from per-stage d(loss)/d(logits).
    void backward(const Cache& cache, const std::vector<Matrix<T>>& dlogits);

    std::vector<NamedParam<T>> parameters();
    std::vector<ConstNamedParam<T>> parameters() const;
    void zero_grad();

    std::vector<Stage> stages;

private:
    TcnConfig cfg_;
};

} // namespace statepipe::models
