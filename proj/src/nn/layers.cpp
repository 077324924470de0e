#include "statepipe/nn/layers.hpp"

#include <cmath>

namespace statepipe::nn {

template <typename T>
Matrix<T> linear_forward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
    require_shape(x.cols() == w.rows(), "linear",
                  "input " + shape_str(x) + " vs weight " + shape_str(w));
    require_shape(b.rows() == 1 && b.cols() == w.cols(), "linear",
                  "bias " + shape_str(b) + " vs weight " + shape_str(w));
    Matrix<T> y(x.rows(), w.cols());
    for (std::size_t t = 0; t < y.rows(); ++t)
        for (std::size_t j = 0; j < y.cols(); ++j) y(t, j) = b[j];
    gemm_rows_acc(x, 0, w, 0, x.cols(), y, 0, x.rows());
    return y;
}

template <typename T>
Matrix<T> linear_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& dy,
                          Matrix<T>& dw, Matrix<T>& db) {
    require_shape(x.cols() == w.rows() && dy.rows() == x.rows() && dy.cols() == w.cols(),
                  "linear backward", "x " + shape_str(x) + ", W " + shape_str(w) + ", dy " +
                                         shape_str(dy));
    require_shape(dw.same_shape(w) && db.cols() == w.cols(), "linear backward",
                  "gradient buffers do not mirror parameters");
    gemm_at_rows_acc(x, 0, dy, 0, x.cols(), dw, 0, x.rows());
    for (std::size_t t = 0; t < dy.rows(); ++t)
        for (std::size_t j = 0; j < dy.cols(); ++j) db[j] += dy(t, j);
    Matrix<T> dx(x.rows(), x.cols());
    gemm_rows_acc_bt(dy, 0, w, 0, w.rows(), dx, 0, dy.rows());
    return dx;
}

template <typename T>
Matrix<T> relu_forward(const Matrix<T>& x) {
    Matrix<T> y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{} ? x[i] : T{};
    return y;
}

template <typename T>
Matrix<T> relu_backward(const Matrix<T>& x, const Matrix<T>& dy) {
    require_shape(x.same_shape(dy), "relu backward", shape_str(x) + " vs " + shape_str(dy));
    Matrix<T> dx(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{} ? dy[i] : T{};
    return dx;
}

template <typename T>
T sigmoid(T z) noexcept {
    if (z >= T{}) return T(1) / (T(1) + std::exp(-z));
    const T e = std::exp(z);
    return e / (T(1) + e);
}

template <typename T>
Matrix<T> sigmoid_forward(const Matrix<T>& z) {
    Matrix<T> p(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.size(); ++i) p[i] = sigmoid(z[i]);
    return p;
}

template <typename T>
Matrix<T> sigmoid_backward(const Matrix<T>& p, const Matrix<T>& dp) {
    require_shape(p.same_shape(dp), "sigmoid backward", shape_str(p) + " vs " + shape_str(dp));
    Matrix<T> dz(p.rows(), p.cols());
    for (std::size_t i = 0; i < p.size(); ++i) dz[i] = dp[i] * p[i] * (T(1) - p[i]);
    return dz;
}

template <typename T>
Matrix<T> dilated_conv1d_forward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b,
                                 std::size_t dilation) {
    const std::size_t c = x.cols();
    require_shape(dilation >= 1, "dilated conv", "dilation must be at least 1");
    require_shape(w.rows() == 3 * c, "dilated conv",
                  "input " + shape_str(x) + " vs kernel " + shape_str(w));
    require_shape(b.rows() == 1 && b.cols() == w.cols(), "dilated conv",
                  "bias " + shape_str(b) + " vs kernel " + shape_str(w));
    const std::size_t n = x.rows();
    Matrix<T> y(n, w.cols());
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < y.cols(); ++j) y(t, j) = b[j];
    // centre tap
    gemm_rows_acc(x, 0, w, c, c, y, 0, n);
    if (dilation < n) {
        const std::size_t m = n - dilation;
        // left tap: y[t] += W_-1 x[t - d] for t >= d
        gemm_rows_acc(x, 0, w, 0, c, y, dilation, m);
        // right tap: y[t] += W_+1 x[t + d] for t + d < n
        gemm_rows_acc(x, dilation, w, 2 * c, c, y, 0, m);
    }
    return y;
}

template <typename T>
Matrix<T> dilated_conv1d_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& dy,
                                  std::size_t dilation, Matrix<T>& dw, Matrix<T>& db) {
    const std::size_t c = x.cols();
    const std::size_t n = x.rows();
    require_shape(w.rows() == 3 * c && dy.rows() == n && dy.cols() == w.cols(),
                  "dilated conv backward",
                  "x " + shape_str(x) + ", W " + shape_str(w) + ", dy " + shape_str(dy));
    require_shape(dw.same_shape(w) && db.cols() == w.cols(), "dilated conv backward",
                  "gradient buffers do not mirror parameters");
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < dy.cols(); ++j) db[j] += dy(t, j);
    Matrix<T> dx(n, c);
    gemm_at_rows_acc(x, 0, dy, 0, c, dw, c, n);
    gemm_rows_acc_bt(dy, 0, w, c, c, dx, 0, n);
    if (dilation < n) {
        const std::size_t m = n - dilation;
        // left tap used x[t - d] at output t
        gemm_at_rows_acc(x, 0, dy, dilation, c, dw, 0, m);
        gemm_rows_acc_bt(dy, dilation, w, 0, c, dx, 0, m);
        // right tap used x[t + d] at output t
        gemm_at_rows_acc(x, dilation, dy, 0, c, dw, 2 * c, m);
        gemm_rows_acc_bt(dy, 0, w, 2 * c, c, dx, dilation, m);
    }
    return dx;
}

template <typename T>
Matrix<T> dropout_forward(const Matrix<T>& x, double rate, Rng& rng, bool training,
                          std::vector<T>& mask) {
    mask.clear();
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
    if (!training || rate == 0.0) return x;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    mask.resize(x.size());
    Matrix<T> y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        mask[i] = rng.uniform() < rate ? T{} : keep_scale;
        y[i] = x[i] * mask[i];
    }
    return y;
}

template <typename T>
Matrix<T> dropout_backward(const Matrix<T>& dy, const std::vector<T>& mask) {
    if (mask.empty()) return dy;
    require_shape(mask.size() == dy.size(), "dropout backward", "mask size mismatch");
    Matrix<T> dx(dy.rows(), dy.cols());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask[i];
    return dx;
}

template <typename T>
void he_init(Matrix<T>& w, std::size_t fan_in, Rng& rng, double scale) {
    const double sd = scale * std::sqrt(2.0 / static_cast<double>(fan_in == 0 ? 1 : fan_in));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(sd * rng.normal());
}

#define STATEPIPE_INSTANTIATE(T)                                                                   \
    template Matrix<T> linear_forward(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&);       \
    template Matrix<T> linear_backward(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,       \
                                       Matrix<T>&, Matrix<T>&);                                   \
    template Matrix<T> relu_forward(const Matrix<T>&);                                             \
    template Matrix<T> relu_backward(const Matrix<T>&, const Matrix<T>&);                          \
    template T sigmoid(T) noexcept;                                                                \
    template Matrix<T> sigmoid_forward(const Matrix<T>&);                                          \
    template Matrix<T> sigmoid_backward(const Matrix<T>&, const Matrix<T>&);                       \
    template Matrix<T> dilated_conv1d_forward(const Matrix<T>&, const Matrix<T>&,                  \
                                              const Matrix<T>&, std::size_t);                     \
    template Matrix<T> dilated_conv1d_backward(const Matrix<T>&, const Matrix<T>&,                 \
                                               const Matrix<T>&, std::size_t, Matrix<T>&,          \
                                               Matrix<T>&);                                        \
    template Matrix<T> dropout_forward(const Matrix<T>&, double, Rng&, bool, std::vector<T>&);     \
    template Matrix<T> dropout_backward(const Matrix<T>&, const std::vector<T>&);                  \
    template void he_init(Matrix<T>&, std::size_t, Rng&, double);

STATEPIPE_INSTANTIATE(float)
STATEPIPE_INSTANTIATE(double)

#undef STATEPIPE_INSTANTIATE

} // namespace statepipe::nn
