#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "grreal/errors.hpp"
#include "grreal/numerics.hpp"
#include "grreal/rng.hpp"

using namespace grreal;

TEST_CASE("affine identity, zero-weight, and hand arithmetic cases") {
    const std::vector<double> x12{1.0, 2.0};
    const std::vector<double> b00{0.0, 0.0};
    const auto y1 = affine(Matrix::identity(2), x12, b00);
    REQUIRE(y1 == std::vector<double>{1.0, 2.0});

    const std::vector<double> x57{5.0, 7.0};
    const std::vector<double> b1m1{1.0, -1.0};
    const auto y2 = affine(Matrix::zeros(2, 2), x57, b1m1);
    REQUIRE(y2 == std::vector<double>{1.0, -1.0});

    Matrix w(2, 2);
    w(0, 0) = 1.0;
    w(0, 1) = 2.0;
    w(1, 0) = 3.0;
    w(1, 1) = 4.0;
    const std::vector<double> ones{1.0, 1.0};
    const auto y3 = affine(w, ones, b00);
    REQUIRE(y3 == std::vector<double>{3.0, 7.0});
}

TEST_CASE("affine rejects shape mismatches") {
    const std::vector<double> x{1.0, 2.0, 3.0};
    const std::vector<double> b{0.0, 0.0};
    REQUIRE_THROWS_AS(affine(Matrix::zeros(2, 2), x, b), dimension_error);
    const std::vector<double> x2{1.0, 2.0};
    const std::vector<double> b3{0.0, 0.0, 0.0};
    REQUIRE_THROWS_AS(affine(Matrix::zeros(2, 2), x2, b3), dimension_error);
}

TEST_CASE("activations at zero and derivative against central difference") {
    const std::vector<double> z{0.0};
    REQUIRE(tanh_vec(z) == std::vector<double>{0.0});
    REQUIRE(sigmoid_vec(z) == std::vector<double>{0.5});

    // sigmoid'(0.3) by central difference.
    const double x = 0.3, h = 1e-6;
    const double fd = (sigmoid(x + h) - sigmoid(x - h)) / (2.0 * h);
    const double analytic = sigmoid_deriv_vec(std::vector<double>{x})[0];
    REQUIRE(std::abs(analytic - fd) < 1e-6);

    const double t = std::tanh(0.3);
    REQUIRE(std::abs(dtanh_from_output(t) - (1.0 - t * t)) == 0.0);
    const double s = sigmoid(0.3);
    REQUIRE(dsigmoid_from_output(s) == s * (1.0 - s));
}

TEST_CASE("check_finite raises on NaN and infinity") {
    REQUIRE_NOTHROW(check_finite(1.0, "x"));
    REQUIRE_THROWS_AS(check_finite(std::nan(""), "x"), numerical_error);
    REQUIRE_THROWS_AS(check_finite(1.0 / 0.0, "x"), numerical_error);
}

TEST_CASE("ParamStore pairs every parameter with a same-shape gradient") {
    ParamStore ps;
    ps.add("W", 3, 2);
    ps.add("b", 3, 1);
    REQUIRE(ps.count() == 2);
    REQUIRE(ps.param("W").same_shape(ps.grad("W")));
    REQUIRE(ps.param("b").same_shape(ps.grad("b")));
    REQUIRE_THROWS_AS(ps.param("nope"), config_error);

    ps.param("W").fill(2.5);
    ps.grad("W").fill(1.0);
    ps.zero_grads();
    for (double g : ps.grad("W").data) REQUIRE(g == 0.0);
    for (double v : ps.param("W").data) REQUIRE(v == 2.5);  // params untouched
}

TEST_CASE("gradient clipping rescales only above the threshold") {
    ParamStore ps;
    ps.add("W", 1, 3);
    ps.grad("W").data = {3.0, 4.0, 0.0};  // norm 5
    ps.clip_grads(10.0);
    REQUIRE(ps.grad("W").data == std::vector<double>{3.0, 4.0, 0.0});
    ps.clip_grads(2.5);
    REQUIRE(std::abs(ps.grad_norm() - 2.5) < 1e-12);
    REQUIRE(std::abs(ps.grad("W").data[0] - 1.5) < 1e-12);
}

TEST_CASE("Adam converges on a quadratic and is a no-op at lr 0") {
    ParamStore ps;
    ps.add("theta", 1, 1);
    ps.param("theta").data[0] = 10.0;
    Adam opt(0.1);
    for (int i = 0; i < 2000; ++i) {
        ps.zero_grads();
        ps.grad("theta").data[0] = 2.0 * (ps.param("theta").data[0] - 3.0);
        opt.step(ps);
    }
    REQUIRE(std::abs(ps.param("theta").data[0] - 3.0) < 1e-6);

    ParamStore frozen;
    frozen.add("w", 2, 2);
    frozen.param("w").data = {0.1, -0.2, 0.3, 0.7};
    const std::vector<double> before = frozen.param("w").data;
    Adam noop(0.0);
    frozen.grad("w").fill(5.0);
    noop.step(frozen);
    REQUIRE(frozen.param("w").data == before);  // bitwise
}

TEST_CASE("grad_check validates analytic gradients and flags wrong ones") {
    ParamStore ps;
    ps.add("theta", 1, 1);
    ps.param("theta").data[0] = 3.0;
    auto f = [&] { return ps.param("theta").data[0] * ps.param("theta").data[0]; };

    ps.grad("theta").data[0] = 6.0;
    REQUIRE(grad_check(ps, f) < 1e-8);

    ps.grad("theta").data[0] = 3.0;  // half the true gradient
    const double err_half = grad_check(ps, f);
    REQUIRE(std::abs(err_half - 0.5) < 1e-6);

    ps.grad("theta").data[0] = 12.0;  // doubled gradient is also flagged
    REQUIRE(grad_check(ps, f) > 0.4);
}

TEST_CASE("uniform fan-in init stays inside (-r, r)") {
    Rng rng(17);
    Matrix m(8, 16);
    init_uniform_fanin(m, m.cols, rng);
    const double r = 1.0 / std::sqrt(16.0);
    double lo = 0.0, hi = 0.0;
    for (double v : m.data) {
        REQUIRE(std::abs(v) <= r);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    REQUIRE(lo < -0.5 * r);  // actually spreads out
    REQUIRE(hi > 0.5 * r);
}

TEST_CASE("dropout mask: deterministic mode, reproducibility, keep fraction") {
    Rng rng(23);
    const DropoutMask ones = sample_dropout_mask(1.0, 5, rng);
    REQUIRE(ones.scaled == std::vector<double>(5, 1.0));

    REQUIRE_THROWS_AS(sample_dropout_mask(0.0, 3, rng), config_error);
    REQUIRE_THROWS_AS(sample_dropout_mask(1.5, 3, rng), config_error);

    Rng a(31), b(31);
    const DropoutMask m1 = sample_dropout_mask(0.8, 64, a);
    const DropoutMask m2 = sample_dropout_mask(0.8, 64, b);
    REQUIRE(m1.scaled == m2.scaled);

    Rng big(37);
    const int n = 100000;
    const DropoutMask wide = sample_dropout_mask(0.8, n, big);
    int kept = 0;
    for (double v : wide.scaled) {
        REQUIRE((v == 0.0 || v == 1.0 / 0.8));
        kept += v != 0.0;
    }
    REQUIRE(std::abs(kept / static_cast<double>(n) - 0.8) < 0.01);
}

TEST_CASE("matrix helpers: outer product and transposed matvec") {
    Matrix w = Matrix::zeros(2, 3);
    const std::vector<double> a{1.0, 2.0};
    const std::vector<double> x{3.0, 4.0, 5.0};
    add_outer(w, a, x);
    REQUIRE(w(0, 0) == 3.0);
    REQUIRE(w(1, 2) == 10.0);

    std::vector<double> out(3, 0.0);
    add_matvec_t(out, w, a);  // out = W^T a
    REQUIRE(out[0] == 1.0 * 3.0 + 2.0 * 6.0);
    REQUIRE(out[2] == 1.0 * 5.0 + 2.0 * 10.0);
}
