#include "statepipe/models/mlp.hpp"

#include "statepipe/core/error.hpp"

namespace statepipe::models {

void MlpConfig::validate() const {
    if (input_dim == 0 || hidden == 0 || num_states == 0)
        throw ConfigError("mlp: input_dim, hidden and num_states must be positive");
}

template <typename T>
Mlp<T>::Mlp(const MlpConfig& cfg, nn::Rng& rng)
    : hidden_w(cfg.input_dim, cfg.hidden), hidden_b(1, cfg.hidden),
      out_w(cfg.hidden, cfg.num_states), out_b(1, cfg.num_states), cfg_(cfg) {
    cfg.validate();
    nn::he_init(hidden_w.value, cfg.input_dim, rng);
    nn::he_init(out_w.value, cfg.hidden, rng, 0.1);
}

template <typename T>
Matrix<T> Mlp<T>::forward(const Matrix<T>& x, Cache* cache) const {
    nn::require_shape(x.cols() == cfg_.input_dim, "mlp",
                      "features have " + std::to_string(x.cols()) + " dims, model expects " +
                          std::to_string(cfg_.input_dim));
    auto h_pre = nn::linear_forward(x, hidden_w.value, hidden_b.value);
    auto h = nn::relu_forward(h_pre);
    auto logits = nn::linear_forward(h, out_w.value, out_b.value);
    if (cache) {
        cache->x = &x;
        cache->h_pre = std::move(h_pre);
        cache->h = std::move(h);
    }
    return logits;
}

template <typename T>
Matrix<T> Mlp<T>::predict(const Matrix<T>& x) const {
    return nn::sigmoid_forward(forward(x));
}

template <typename T>
void Mlp<T>::backward(const Cache& cache, const Matrix<T>& dlogits) {
    auto dh = nn::linear_backward(cache.h, out_w.value, dlogits, out_w.grad, out_b.grad);
    auto dh_pre = nn::relu_backward(cache.h_pre, dh);
    nn::linear_backward(*cache.x, hidden_w.value, dh_pre, hidden_w.grad, hidden_b.grad);
}

template <typename T>
std::vector<NamedParam<T>> Mlp<T>::parameters() {
    return {{"hidden.w", &hidden_w}, {"hidden.b", &hidden_b}, {"out.w", &out_w}, {"out.b", &out_b}};
}

template <typename T>
std::vector<ConstNamedParam<T>> Mlp<T>::parameters() const {
    return {{"hidden.w", &hidden_w}, {"hidden.b", &hidden_b}, {"out.w", &out_w}, {"out.b", &out_b}};
}

template <typename T>
void Mlp<T>::zero_grad() {
    for (auto& p : parameters()) p.param->zero_grad();
}

template class Mlp<float>;
template class Mlp<double>;

} // namespace statepipe::models
