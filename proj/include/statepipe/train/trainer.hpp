#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "statepipe/core/types.hpp"
#include "statepipe/models/mlp.hpp"
#include "statepipe/models/tcn.hpp"
#include "statepipe/nn/adamw.hpp"
#include "statepipe/nn/loss.hpp"

namespace statepipe::train {

using models::Mlp;
using models::Tcn;
using nn::Matrix;

struct TrainConfig {
    std::size_t batch_size = 16;
    std::size_t epochs_stage1 = 50;
    std::size_t epochs_stage2 = 50;
    double lr = 1e-4;
    double weight_decay = 0.01;
    double alpha = 0.5;
    double ema_momentum = 0.999;
    std::uint64_t seed = 0;

    std::size_t mlp_hidden = 512;
    std::size_t tcn_channels = 512;
    std::size_t tcn_layers = 10;
    std::size_t tcn_stages = 4;
    double dropout = 0.5;
    bool ema_per_epoch = false;           // default: after every optimizer step
    bool selftrain_assigned_only = false; // restrict soft targets to originally assigned cells

    void validate() const;
    nn::AdamWConfig optimizer() const { return {lr, 0.9, 0.999, 1e-8, weight_decay}; }
    models::MlpConfig mlp_config(std::size_t input_dim, std::size_t num_states) const;
    models::TcnConfig tcn_config(std::size_t input_dim, std::size_t num_states) const;
};

// key=value lines; '#' starts a comment; unknown keys are an error.
TrainConfig parse_train_config(const std::string& text);
TrainConfig read_train_config(const std::string& path);
std::string encode_train_config(const TrainConfig& cfg);

struct Example {
    std::string video_id;
    Matrix<float> features;
    nn::Targets<float> targets;
};

Matrix<float> to_matrix(const FeatureSequence& seq);
Example make_example(const FeatureSequence& features, const PseudoLabelTimeline& labels);

struct Teachers {
    Mlp<float> mlp;
    Tcn<float> tcn;
};

struct LossHistory {
    std::vector<double> mlp; // per epoch, mean over valid cells
    std::vector<double> tcn; // per epoch, summed over stages
    std::size_t steps = 0;
};

// Fresh models for a given seed; `role` separates teacher and student streams.
Mlp<float> init_mlp(const TrainConfig& cfg, std::size_t input_dim, std::size_t num_states,
                    std::uint64_t role);
Tcn<float> init_tcn(const TrainConfig& cfg, std::size_t input_dim, std::size_t num_states,
                    std::uint64_t role);

inline constexpr std::uint64_t kTeacherRole = 1;
inline constexpr std::uint64_t kStudentRole = 2;

Teachers train_teachers(std::span<const Example> data, const TrainConfig& cfg,
                        LossHistory* history = nullptr);

// alpha * tcn + (1 - alpha) * mlp, elementwise.
template <typename T>
Matrix<T> ensemble_target(const Matrix<T>& tcn, const Matrix<T>& mlp, double alpha) {
    nn::require_shape(tcn.same_shape(mlp), "ensemble target",
                      nn::shape_str(tcn) + " vs " + nn::shape_str(mlp));
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    Matrix<T> out(tcn.rows(), tcn.cols());
    const T a = static_cast<T>(alpha);
    const T b = static_cast<T>(1.0 - alpha);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (alpha == 1.0) out[i] = tcn[i];
        else if (alpha == 0.0) out[i] = mlp[i];
        else out[i] = a * tcn[i] + b * mlp[i];
    }
    return out;
}

// teacher <- m * teacher + (1 - m) * student, for every parameter.
template <typename T>
void ema_update(std::span<const nn::NamedParam<T>> teacher,
                std::span<const nn::ConstNamedParam<T>> student, double momentum) {
    nn::require_shape(teacher.size() == student.size(), "ema update", "parameter count mismatch");
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("momentum must lie in [0, 1]");
    const T m = static_cast<T>(momentum);
    const T r = static_cast<T>(1.0 - momentum);
    for (std::size_t i = 0; i < teacher.size(); ++i) {
        auto& tv = teacher[i].param->value;
        const auto& sv = student[i].param->value;
        nn::require_shape(tv.same_shape(sv), "ema update", "shape mismatch at " + teacher[i].name);
        if (momentum == 1.0) continue;
        for (std::size_t j = 0; j < tv.size(); ++j) tv[j] = m * tv[j] + r * sv[j];
    }
}

struct SelfTrainResult {
    Tcn<float> student_tcn;
    Mlp<float> student_mlp;
    Teachers teachers; // after EMA updates
};

SelfTrainResult self_train(Teachers teachers, std::span<const Example> data,
                           const TrainConfig& cfg, LossHistory* history = nullptr);

} // namespace statepipe::train
