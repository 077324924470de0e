#include "statepipe/nn/adamw.hpp"

#include <cmath>

namespace statepipe::nn {

template <typename T>
void adamw_step(std::span<Param<T>* const> params, AdamWState<T>& state, const AdamWConfig& cfg) {
    if (state.m.empty() && state.step == 0) {
        for (auto* p : params) {
            state.m.emplace_back(p->value.rows(), p->value.cols());
            state.v.emplace_back(p->value.rows(), p->value.cols());
        }
    }
    require_shape(state.m.size() == params.size() && state.v.size() == params.size(), "adamw",
                  "optimizer state holds " + std::to_string(state.m.size()) + " tensors for " +
                      std::to_string(params.size()) + " parameters");
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const double decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        require_shape(p.value.same_shape(p.grad) && p.value.same_shape(m), "adamw",
                      "parameter " + std::to_string(i) + " shape " + shape_str(p.value));
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double g = p.grad[j];
            const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            double theta = static_cast<double>(p.value[j]) * decay;
            theta -= cfg.lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
            p.value[j] = static_cast<T>(theta);
        }
    }
}

template void adamw_step(std::span<Param<float>* const>, AdamWState<float>&, const AdamWConfig&);
template void adamw_step(std::span<Param<double>* const>, AdamWState<double>&, const AdamWConfig&);

} // namespace statepipe::nn
