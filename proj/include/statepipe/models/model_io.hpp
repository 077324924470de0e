#pragma once

#include <string>
#include <vector>

#include "statepipe/models/mlp.hpp"
#include "statepipe/models/tcn.hpp"
#include "statepipe/nn/loss.hpp"

namespace statepipe::models {

template <typename T>
struct MultiStageLoss {
    T loss{};
    std::vector<Matrix<T>> grads; // per stage, with respect to the logits
};

// Sum over stages of the masked mean BCE.
template <typename T>
MultiStageLoss<T> multi_stage_loss(const std::vector<Matrix<T>>& stage_logits,
                                   const nn::Targets<T>& targets);

// Weights go to `<dir>/<name>.spw`, hyperparameters to `<dir>/<name>.json`.
void save_mlp(const Mlp<float>& model, const std::string& dir, const std::string& name);
void save_tcn(const Tcn<float>& model, const std::string& dir, const std::string& name);
Mlp<float> load_mlp(const std::string& dir, const std::string& name);
Tcn<float> load_tcn(const std::string& dir, const std::string& name);

std::string encode_config(const MlpConfig& cfg);
std::string encode_config(const TcnConfig& cfg);
MlpConfig decode_mlp_config(const std::string& text);
TcnConfig decode_tcn_config(const std::string& text);

} // namespace statepipe::models
