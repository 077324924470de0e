#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "statepipe/core/error.hpp"
#include "statepipe/nn/adamw.hpp"
#include "statepipe/nn/checkpoint.hpp"
#include "statepipe/nn/layers.hpp"
#include "statepipe/nn/loss.hpp"
#include "unit/helpers.hpp"

using namespace statepipe;
using namespace statepipe::nn;
using testutil::grad_check;
using testutil::random_matrix;
using M = Matrix<double>;

namespace {

double dot(const M& a, const M& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Keeps inputs away from the ReLU kink so finite differences stay smooth.
void push_from_zero(M& m) {
    for (std::size_t i = 0; i < m.size(); ++i)
        if (std::abs(m[i]) < 0.05) m[i] = m[i] < 0 ? -0.05 : 0.05;
}

Targets<double> random_targets(std::size_t r, std::size_t c, Rng& rng, bool soft) {
    Targets<double> t{M(r, c), std::vector<std::uint8_t>(r * c, 0)};
    for (std::size_t i = 0; i < t.y.size(); ++i) {
        t.y[i] = soft ? rng.uniform() : static_cast<double>(rng.below(2));
        t.mask[i] = rng.below(3) != 0;
    }
    return t;
}

std::uint64_t bits(double d) {
    std::uint64_t u;
    std::memcpy(&u, &d, 8);
    return u;
}

} // namespace

TEST_CASE("linear forward examples") {
    const M x(1, 2, std::vector<double>{1, 0});
    const M w(2, 2, std::vector<double>{2, 3, 4, 5});
    const M b(1, 2, std::vector<double>{1, 1});
    CHECK(linear_forward(x, w, b) == M(1, 2, std::vector<double>{3, 4}));
    Rng rng(1);
    const auto xi = random_matrix<double>(4, 3, rng);
    M eye(3, 3);
    for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1;
    CHECK(linear_forward(xi, eye, M(1, 3)) == xi);
    M dw(3, 3), db(1, 3);
    linear_backward(xi, eye, M(4, 3, 1.0), dw, db);
    CHECK(db == M(1, 3, 4.0));
    CHECK_THROWS_AS(linear_forward(M(2, 2), M(3, 2), M(1, 2)), ShapeError);
}

TEST_CASE("linear gradients match finite differences") {
    Rng rng(2);
    for (int rep = 0; rep < 10; ++rep) {
        const auto t = 1 + rng.below(8), din = 1 + rng.below(5), dout = 1 + rng.below(5);
        auto x = random_matrix<double>(t, din, rng);
        auto w = random_matrix<double>(din, dout, rng);
        auto b = random_matrix<double>(1, dout, rng);
        const auto r = random_matrix<double>(t, dout, rng);
        const auto f = [&] { return dot(linear_forward(x, w, b), r); };
        M dw(din, dout), db(1, dout);
        const auto dx = linear_backward(x, w, r, dw, db);
        CHECK(grad_check(x, dx, f) < 1e-6);
        CHECK(grad_check(w, dw, f) < 1e-6);
        CHECK(grad_check(b, db, f) < 1e-6);
    }
}

TEST_CASE("relu and sigmoid examples") {
    const M x(1, 2, std::vector<double>{-3, 3});
    CHECK(relu_forward(x) == M(1, 2, std::vector<double>{0, 3}));
    CHECK(relu_backward(x, M(1, 2, 1.0)) == M(1, 2, std::vector<double>{0, 1}));
    CHECK(sigmoid(0.0) == 0.5);
    for (double z : {-500.0, 500.0, -1e300, 1e300, -30.0, 30.0}) {
        CHECK(sigmoid(z) >= 0.0);
        CHECK(sigmoid(z) <= 1.0);
        CHECK(std::isfinite(sigmoid(z)));
    }
    for (float z : {-80.0f, -20.0f, 0.0f, 15.0f}) {
        CHECK(sigmoid(z) > 0.0f);
        CHECK(sigmoid(z) < 1.0f);
    }
    CHECK(sigmoid(-500.0) > 0.0);
    CHECK(sigmoid(30.0) < 1.0);
}

TEST_CASE("relu and sigmoid gradients match finite differences") {
    Rng rng(3);
    for (int rep = 0; rep < 10; ++rep) {
        auto z = random_matrix<double>(1 + rng.below(8), 1 + rng.below(5), rng, 2.0);
        push_from_zero(z);
        const auto r = random_matrix<double>(z.rows(), z.cols(), rng);
        CHECK(grad_check(z, relu_backward(z, r), [&] { return dot(relu_forward(z), r); }) < 1e-6);
        const auto p = sigmoid_forward(z);
        CHECK(grad_check(z, sigmoid_backward(p, r), [&] { return dot(sigmoid_forward(z), r); }) < 1e-6);
    }
}

TEST_CASE("dilated convolution examples") {
    Rng rng(4);
    const std::size_t c = 3;
    const auto x1 = random_matrix<double>(1, c, rng);
    const auto w = random_matrix<double>(3 * c, c, rng);
    const auto b = random_matrix<double>(1, c, rng);
    for (std::size_t d : {1u, 2u, 64u}) {
        const auto y = dilated_conv1d_forward(x1, w, b, d);
        for (std::size_t o = 0; o < c; ++o) {
            double expect = b(0, o);
            for (std::size_t i = 0; i < c; ++i) expect += x1(0, i) * w(c + i, o);
            CHECK(y(0, o) == doctest::Approx(expect).epsilon(1e-14));
        }
    }
    M ident(3 * c, c);
    for (std::size_t i = 0; i < c; ++i) ident(c + i, i) = 1;
    const auto x = random_matrix<double>(9, c, rng);
    CHECK(dilated_conv1d_forward(x, ident, M(1, c), 4) == x);
}

TEST_CASE("dilated convolution gradients: T=7, C=3, d=2 and random shapes") {
    Rng rng(5);
    auto run = [&](std::size_t t, std::size_t cin, std::size_t cout, std::size_t d) {
        auto x = random_matrix<double>(t, cin, rng);
        auto w = random_matrix<double>(3 * cin, cout, rng);
        auto b = random_matrix<double>(1, cout, rng);
        const auto r = random_matrix<double>(t, cout, rng);
        const auto f = [&] { return dot(dilated_conv1d_forward(x, w, b, d), r); };
        M dw(3 * cin, cout), db(1, cout);
        const auto dx = dilated_conv1d_backward(x, w, r, d, dw, db);
        CHECK(grad_check(x, dx, f) < 1e-6);
        CHECK(grad_check(w, dw, f) < 1e-6);
        CHECK(grad_check(b, db, f) < 1e-6);
    };
    run(7, 3, 3, 2);
    for (int rep = 0; rep < 10; ++rep)
        run(1 + rng.below(8), 1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(6));
}

TEST_CASE("dropout") {
    Rng rng(6);
    const auto x = random_matrix<double>(5, 4, rng);
    std::vector<double> mask;
    CHECK(dropout_forward(x, 0.5, rng, false, mask) == x);
    CHECK(mask.empty());
    CHECK(dropout_forward(x, 0.0, rng, true, mask) == x);
    Rng a(77), b(77);
    std::vector<double> ma, mb;
    const auto ya = dropout_forward(x, 0.5, a, true, ma);
    const auto yb = dropout_forward(x, 0.5, b, true, mb);
    CHECK(ma == mb);
    CHECK(ya == yb);
    for (std::size_t i = 0; i < ma.size(); ++i) {
        CHECK((ma[i] == 0.0 || ma[i] == 2.0));
        CHECK(ya[i] == x[i] * ma[i]);
    }
    const auto dy = random_matrix<double>(5, 4, rng);
    const auto dx = dropout_backward(dy, ma);
    for (std::size_t i = 0; i < dx.size(); ++i) CHECK(dx[i] == dy[i] * ma[i]);
    CHECK_THROWS_AS(dropout_forward(x, 1.0, rng, true, mask), ConfigError);
    CHECK_THROWS_AS(dropout_forward(x, -0.1, rng, true, mask), ConfigError);
}

TEST_CASE("masked BCE examples") {
    Targets<double> one{M(1, 1, 1.0), {1}};
    CHECK(masked_bce(M(1, 1, 0.0), one).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(std::abs(masked_bce(M(1, 1, 0.0), one).loss - 0.693147) < 1e-6);

    Targets<double> hard{M(2, 2, std::vector<double>{1, 0, 0, 1}), {1, 1, 1, 1}};
    const M confident(2, 2, std::vector<double>{40, -40, -40, 40});
    CHECK(masked_bce(confident, hard).loss < 1e-12);

    Targets<double> none{M(3, 2, 1.0), std::vector<std::uint8_t>(6, 0)};
    Rng rng(7);
    const auto r = masked_bce(random_matrix<double>(3, 2, rng), none);
    CHECK(r.loss == 0.0);
    CHECK(r.valid == 0);
    CHECK(r.grad == M(3, 2));
}

TEST_CASE("masked BCE gradient matches finite differences, hard and soft targets") {
    Rng rng(8);
    for (int rep = 0; rep < 20; ++rep) {
        auto z = random_matrix<double>(1 + rng.below(8), 1 + rng.below(3), rng, 3.0);
        const auto t = random_targets(z.rows(), z.cols(), rng, rep % 2 == 1);
        const auto res = masked_bce(z, t);
        CHECK(grad_check(z, res.grad, [&] { return masked_bce(z, t).loss; }) < 1e-6);
        for (std::size_t i = 0; i < z.size(); ++i)
            if (t.mask[i]) CHECK(res.grad[i] == doctest::Approx((sigmoid(z[i]) - t.y[i]) / res.valid));
    }
}

TEST_CASE("masked cells are inert bitwise") {
    Rng rng(9);
    for (int rep = 0; rep < 50; ++rep) {
        const auto z = random_matrix<double>(1 + rng.below(8), 1 + rng.below(4), rng, 4.0);
        const auto t = random_targets(z.rows(), z.cols(), rng, false);
        const auto base = masked_bce(z, t);
        auto z2 = z;
        for (std::size_t i = 0; i < z2.size(); ++i)
            if (!t.mask[i]) z2[i] = rng.normal() * 1e3;
        const auto pert = masked_bce(z2, t);
        CHECK(bits(pert.loss) == bits(base.loss));
        for (std::size_t i = 0; i < z.size(); ++i) {
            CHECK(bits(pert.grad[i]) == bits(base.grad[i]));
            if (!t.mask[i]) CHECK(bits(base.grad[i]) == 0u);
        }
    }
}

TEST_CASE("targets from labels and soft targets") {
    PseudoLabelTimeline tl("v", 2, 2);
    tl.set(0, 0, TernaryLabel::Positive, Provenance{0, "x"});
    tl.set(1, 1, TernaryLabel::Negative, Provenance{0, "x"});
    const auto t = targets_from_labels<double>(tl);
    CHECK(t.y == M(2, 2, std::vector<double>{1, 0, 0, 0}));
    CHECK(t.mask == std::vector<std::uint8_t>{1, 0, 0, 1});
    CHECK(t.valid_count() == 2);
    const auto s = soft_targets(M(2, 3, 0.3));
    CHECK(s.valid_count() == 6);
}

TEST_CASE("AdamW closed forms") {
    Param<double> p(1, 1);
    p.value(0, 0) = 1.0;
    std::vector<Param<double>*> ps{&p};
    AdamWState<double> st;
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    adamw_step<double>(ps, st, cfg);
    CHECK(p.value(0, 0) == 1.0);

    cfg.weight_decay = 0.01;
    AdamWState<double> st2;
    adamw_step<double>(ps, st2, cfg);
    CHECK(p.value(0, 0) == doctest::Approx(1.0 - 1e-6).epsilon(1e-15));

    Param<double> q(1, 1);
    q.value(0, 0) = 0.5;
    q.grad(0, 0) = 1.0;
    std::vector<Param<double>*> qs{&q};
    AdamWState<double> st3;
    AdamWConfig nodecay;
    nodecay.weight_decay = 0.0;
    adamw_step<double>(qs, st3, nodecay);
    const double adaptive = -1e-4 * (1.0 / (1 - 0.9)) * (1 - 0.9) / (std::sqrt(1.0 * (1 - 0.999) / (1 - 0.999)) + 1e-8);
    CHECK(q.value(0, 0) - 0.5 == doctest::Approx(adaptive).epsilon(1e-9));
    CHECK(q.value(0, 0) - 0.5 == doctest::Approx(-1e-4).epsilon(1e-6));
    CHECK(st3.step == 1);
}

TEST_CASE("AdamW with wd=0 equals a reference Adam and lr=0 is identity") {
    Rng rng(10);
    Param<double> p(3, 2);
    p.value = random_matrix<double>(3, 2, rng);
    auto ref = p.value;
    std::vector<double> m(6, 0), v(6, 0);
    AdamWConfig cfg;
    cfg.weight_decay = 0;
    cfg.lr = 1e-2;
    AdamWState<double> st;
    std::vector<Param<double>*> ps{&p};
    for (int step = 1; step <= 20; ++step) {
        p.grad = random_matrix<double>(3, 2, rng);
        for (std::size_t i = 0; i < 6; ++i) {
            const double g = p.grad[i];
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.999 * v[i] + 0.001 * g * g;
            const double mh = m[i] / (1 - std::pow(0.9, step));
            const double vh = v[i] / (1 - std::pow(0.999, step));
            ref[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
        }
        adamw_step<double>(ps, st, cfg);
        for (std::size_t i = 0; i < 6; ++i) CHECK(p.value[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
    const auto before = p.value;
    cfg.lr = 0;
    cfg.weight_decay = 0.5;
    adamw_step<double>(ps, st, cfg);
    CHECK(p.value == before);
}

TEST_CASE("checkpoints round-trip and reject corruption") {
    Rng rng(11);
    testutil::TempDir dir("nn");
    for (int rep = 0; rep < 30; ++rep) {
        std::vector<NamedTensor> ts;
        for (std::size_t i = 0; i < rng.below(5); ++i) {
            NamedTensor t{"t" + std::to_string(i), static_cast<std::uint32_t>(rng.below(6)),
                          static_cast<std::uint32_t>(rng.below(6)), {}};
            for (std::size_t j = 0; j < std::size_t{t.rows} * t.cols; ++j) t.data.push_back(static_cast<float>(rng.normal()));
            ts.push_back(t);
        }
        write_checkpoint(dir / "c.spw", ts);
        CHECK(read_checkpoint(dir / "c.spw") == ts);
        const auto bytes = encode_checkpoint(ts);
        CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);
    }
    std::vector<NamedTensor> one{{"w", 1, 2, {1.0f, 2.0f}}};
    auto bytes = encode_checkpoint(one);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SPW1");
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
    bad = bytes;
    bad.pop_back();
    CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
    bad = bytes;
    bad.push_back(0);
    CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
    one[0].data[1] = std::numeric_limits<float>::quiet_NaN();
    bad = bytes;
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(bad.data() + bad.size() - 4, &nan, 4);
    CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
}

TEST_CASE("tensor loading checks names and shapes") {
    Param<float> a(2, 3), b(1, 3);
    a.value.fill(1.5f);
    std::vector<ConstNamedParam<float>> cps{{"a", &a}, {"b", &b}};
    const auto ts = to_tensors<float>(cps);
    Param<float> a2(2, 3), b2(1, 3);
    std::vector<NamedParam<float>> ps{{"a", &a2}, {"b", &b2}};
    load_tensors<float>(ts, ps);
    CHECK(a2.value == a.value);
    std::vector<NamedParam<float>> renamed{{"a", &a2}, {"c", &b2}};
    CHECK_THROWS_AS(load_tensors<float>(ts, renamed), ShapeError);
    Param<float> wrong(3, 2);
    std::vector<NamedParam<float>> reshaped{{"a", &wrong}, {"b", &b2}};
    CHECK_THROWS_AS(load_tensors<float>(ts, reshaped), ShapeError);
}

TEST_CASE("rng streams are reproducible") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
    Rng c(5);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 7000; ++i) ++counts[c.below(7)];
    for (int n : counts) CHECK(n > 800);
    CHECK(mix_seed(1, 2) != mix_seed(2, 1));
    double sum = 0, sq = 0;
    for (int i = 0; i < 20000; ++i) {
        const double z = c.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::abs(sum / 20000) < 0.03);
    CHECK(std::abs(sq / 20000 - 1) < 0.05);
}
