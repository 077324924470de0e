#include "statepipe/models/tcn.hpp"

#include "statepipe/core/error.hpp"

namespace statepipe::models {

void TcnConfig::validate() const {
    if (input_dim == 0 || num_states == 0 || channels == 0 || stages == 0)
        throw ConfigError("tcn: input_dim, num_states, channels and stages must be positive");
    if (layers > 30) throw ConfigError("tcn: at most 30 layers per stage");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("tcn: dropout must lie in [0, 1)");
}

std::size_t TcnConfig::receptive_radius() const noexcept {
    return (std::size_t{1} << layers) - 1;
}

template <typename T>
Tcn<T>::Tcn(const TcnConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const auto c = cfg.channels;
    for (std::size_t s = 0; s < cfg.stages; ++s) {
        Stage st;
        const auto in_dim = s == 0 ? cfg.input_dim : cfg.num_states;
        st.in_w = Param<T>(in_dim, c);
        st.in_b = Param<T>(1, c);
        nn::he_init(st.in_w.value, in_dim, rng);
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            Layer layer;
            layer.dilation = std::size_t{1} << l;
            layer.conv_w = Param<T>(3 * c, c);
            layer.conv_b = Param<T>(1, c);
            layer.pw_w = Param<T>(c, c);
            layer.pw_b = Param<T>(1, c);
            nn::he_init(layer.conv_w.value, 3 * c, rng);
            nn::he_init(layer.pw_w.value, c, rng);
            st.layers.push_back(std::move(layer));
        }
        st.out_w = Param<T>(c, cfg.num_states);
        st.out_b = Param<T>(1, cfg.num_states);
        nn::he_init(st.out_w.value, c, rng, 0.1);
        stages.push_back(std::move(st));
    }
}

template <typename T>
std::vector<Matrix<T>> Tcn<T>::forward(const Matrix<T>& x, Cache* cache, ForwardOptions opt) const {
    nn::require_shape(x.cols() == cfg_.input_dim, "tcn",
                      "features have " + std::to_string(x.cols()) + " dims, model expects " +
                          std::to_string(cfg_.input_dim));
    nn::Rng rng(opt.dropout_seed);
    const double rate = opt.training ? cfg_.dropout : 0.0;
    std::vector<Matrix<T>> logits;
    if (cache) cache->stages.assign(stages.size(), {});
    Matrix<T> input = x;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const auto& st = stages[s];
        auto a = nn::linear_forward(input, st.in_w.value, st.in_b.value);
        StageCache* sc = cache ? &cache->stages[s] : nullptr;
        for (const auto& layer : st.layers) {
            auto h = nn::dilated_conv1d_forward(a, layer.conv_w.value, layer.conv_b.value,
                                                layer.dilation);
            auto r = nn::relu_forward(h);
            auto u = nn::linear_forward(r, layer.pw_w.value, layer.pw_b.value);
            std::vector<T> mask;
            auto v = nn::dropout_forward(u, rate, rng, opt.training, mask);
            Matrix<T> next = a;
            for (std::size_t i = 0; i < next.size(); ++i) next[i] += v[i];
            if (sc) sc->layers.push_back({std::move(a), std::move(h), std::move(r), std::move(mask)});
            a = std::move(next);
        }
        auto z = nn::linear_forward(a, st.out_w.value, st.out_b.value);
        Matrix<T> next_input;
        if (s + 1 < stages.size()) next_input = nn::sigmoid_forward(z);
        if (sc) {
            sc->input = std::move(input);
            sc->last = std::move(a);
        }
        input = std::move(next_input);
        logits.push_back(std::move(z));
    }
    return logits;
}

template <typename T>
Matrix<T> Tcn<T>::predict(const Matrix<T>& x) const {
    auto logits = forward(x);
    return nn::sigmoid_forward(logits.back());
}

template <typename T>
void Tcn<T>::backward(const Cache& cache, const std::vector<Matrix<T>>& dlogits) {
    nn::require_shape(dlogits.size() == stages.size() && cache.stages.size() == stages.size(),
                      "tcn backward", "expected one gradient per stage");
    Matrix<T> dprob; // gradient w.r.t. this stage's output probabilities, from the next stage
    for (std::size_t s = stages.size(); s-- > 0;) {
        auto& st = stages[s];
        const auto& sc = cache.stages[s];
        Matrix<T> dz = dlogits[s];
        if (!dprob.empty()) {
            // the next stage consumed sigmoid(z) as its input
            const auto dz_chain = nn::sigmoid_backward(cache.stages[s + 1].input, dprob);
            for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += dz_chain[i];
        }
        auto da = nn::linear_backward(sc.last, st.out_w.value, dz, st.out_w.grad, st.out_b.grad);
        for (std::size_t l = st.layers.size(); l-- > 0;) {
            auto& layer = st.layers[l];
            const auto& lc = sc.layers[l];
            auto du = nn::dropout_backward(da, lc.mask);
            auto dr = nn::linear_backward(lc.r, layer.pw_w.value, du, layer.pw_w.grad, layer.pw_b.grad);
            auto dh = nn::relu_backward(lc.h, dr);
            auto dx = nn::dilated_conv1d_backward(lc.x, layer.conv_w.value, dh, layer.dilation,
                                                  layer.conv_w.grad, layer.conv_b.grad);
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += dx[i];
        }
        dprob = nn::linear_backward(sc.input, st.in_w.value, da, st.in_w.grad, st.in_b.grad);
    }
}

template <typename T>
std::vector<NamedParam<T>> Tcn<T>::parameters() {
    std::vector<NamedParam<T>> out;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        auto& st = stages[s];
        const auto p = "stage" + std::to_string(s) + ".";
        out.push_back({p + "in.w", &st.in_w});
        out.push_back({p + "in.b", &st.in_b});
        for (std::size_t l = 0; l < st.layers.size(); ++l) {
            auto& layer = st.layers[l];
            const auto q = p + "layer" + std::to_string(l) + ".";
            out.push_back({q + "conv.w", &layer.conv_w});
            out.push_back({q + "conv.b", &layer.conv_b});
            out.push_back({q + "pw.w", &layer.pw_w});
            out.push_back({q + "pw.b", &layer.pw_b});
        }
        out.push_back({p + "out.w", &st.out_w});
        out.push_back({p + "out.b", &st.out_b});
    }
    return out;
}

template <typename T>
std::vector<ConstNamedParam<T>> Tcn<T>::parameters() const {
    std::vector<ConstNamedParam<T>> out;
    for (const auto& p : const_cast<Tcn*>(this)->parameters()) out.push_back({p.name, p.param});
    return out;
}

template <typename T>
void Tcn<T>::zero_grad() {
    for (auto& p : parameters()) p.param->zero_grad();
}

template class Tcn<float>;
template class Tcn<double>;

} // namespace statepipe::models
