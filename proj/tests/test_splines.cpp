#include "doctest.h"

#include <cmath>
#include <vector>

#include "splineflow/errors.hpp"
#include "splineflow/rng.hpp"
#include "splineflow/splines.hpp"

using namespace splineflow;
namespace sp = splineflow::splines;

namespace {

std::vector<double> random_theta(std::size_t len, Rng& rng, double scale = 3.0) {
  std::vector<double> t(len);
  for (double& v : t) v = rng.uniform(-scale, scale);
  return t;
}

sp::KnotSet uniform_knots(int K) {
  sp::KnotSet ks;
  ks.K = K;
  ks.x.resize(K + 1);
  ks.y.resize(K + 1);
  for (int k = 0; k <= K; ++k) {
    ks.x[k] = static_cast<double>(k) / K;
    ks.y[k] = ks.x[k];
  }
  ks.x[K] = 1.0;
  ks.y[K] = 1.0;
  ks.d0_raw = 1.0;
  ks.dK_raw = 1.0;
  return ks;
}

}  // namespace

TEST_CASE("knots_from_raw validates the parameter length") {
  Rng rng(1);
  CHECK_NOTHROW(sp::knots_from_raw(random_theta(22, rng), 10, 1e-3));
  CHECK_THROWS_AS(sp::knots_from_raw(random_theta(21, rng), 10, 1e-3), NumericError);
  CHECK_THROWS_AS(sp::knots_from_raw(random_theta(23, rng), 10, 1e-3), NumericError);
}

TEST_CASE("knots_from_raw: zero logits give uniform knots") {
  std::vector<double> theta(10, 0.0);  // K=4 -> 2K+2 = 10
  sp::KnotSet ks = sp::knots_from_raw(theta, 4, 1e-3);
  for (int k = 0; k <= 4; ++k) {
    CHECK(ks.x[k] == doctest::Approx(k / 4.0).epsilon(1e-12));
    CHECK(ks.y[k] == doctest::Approx(k / 4.0).epsilon(1e-12));
  }
  // softplus(0) + 1e-3
  CHECK(ks.d0_raw == doctest::Approx(0.6941471805599453).epsilon(1e-15));
  CHECK(ks.dK_raw == ks.d0_raw);
}

TEST_CASE("knots_from_raw: hand-evaluated softmax widths") {
  std::vector<double> theta(6, 0.0);  // K=2
  theta[0] = std::log(2.0);
  sp::KnotSet ks = sp::knots_from_raw(theta, 2, 0.0);
  CHECK(ks.x[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(ks.x[2] == 1.0);
}

TEST_CASE("knots_from_raw rejects bad inputs") {
  std::vector<double> theta(10, 0.0);
  theta[3] = std::nan("");
  CHECK_THROWS_AS(sp::knots_from_raw(theta, 4, 1e-3), NumericError);
  std::vector<double> ok(10, 0.0);
  CHECK_THROWS_AS(sp::knots_from_raw(ok, 4, 0.3), NumericError);  // min_bin >= 1/K
  CHECK_THROWS_AS(sp::knots_from_raw(ok, 4, -0.1), NumericError);
}

TEST_CASE("steffen_build: uniform knots produce the identity map") {
  sp::CubicSplineCoeffs c = sp::steffen_build(uniform_knots(4));
  for (int k = 0; k <= 4; ++k) CHECK(c.d[k] == doctest::Approx(1.0).epsilon(1e-12));
  for (int k = 0; k < 4; ++k) {
    CHECK(c.a1[k] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.a2[k] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(c.a3[k] == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("steffen_build: single bin with zero boundary derivatives") {
  sp::KnotSet ks;
  ks.K = 1;
  ks.x = {0.0, 1.0};
  ks.y = {0.0, 1.0};
  ks.d0_raw = 0.0;
  ks.dK_raw = 0.0;
  sp::CubicSplineCoeffs c = sp::steffen_build(ks);
  CHECK(c.a0[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(c.a1[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(c.a2[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(c.a3[0] == doctest::Approx(-2.0).epsilon(1e-12));
}

TEST_CASE("steffen_build: interior clamp engages") {
  sp::KnotSet ks;
  ks.K = 2;
  ks.x = {0.0, 0.5, 1.0};
  ks.y = {0.0, 0.1, 1.0};
  ks.d0_raw = 1.0;
  ks.dK_raw = 1.0;
  sp::CubicSplineCoeffs c = sp::steffen_build(ks);
  CHECK(c.s[0] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(c.s[1] == doctest::Approx(1.8).epsilon(1e-12));
  // proposal p_1 = (0.2*0.5 + 1.8*0.5) / 1 = 1.0 exceeds 2*min(s) = 0.4
  CHECK(c.d[1] == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("steffen_build rejects invalid knot sets") {
  sp::KnotSet ks = uniform_knots(3);
  ks.y[1] = ks.y[2];  // not strictly increasing
  CHECK_THROWS_AS(sp::steffen_build(ks), NumericError);
  sp::KnotSet ks2 = uniform_knots(3);
  ks2.d0_raw = -0.5;
  CHECK_THROWS_AS(sp::steffen_build(ks2), NumericError);
  sp::KnotSet ks3 = uniform_knots(3);
  ks3.x[0] = 0.01;
  CHECK_THROWS_AS(sp::steffen_build(ks3), NumericError);
}

TEST_CASE("cubic_eval: identity spline and boundary values") {
  sp::CubicSplineCoeffs c = sp::steffen_build(uniform_knots(4));
  sp::EvalResult r = sp::cubic_eval(c, 0.3);
  CHECK(r.y == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(r.log_deriv == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sp::cubic_eval(c, 1.0).y == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sp::cubic_eval(c, 0.0).y == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cubic_eval: cubic ease curve at the midpoint") {
  sp::KnotSet ks;
  ks.K = 1;
  ks.x = {0.0, 1.0};
  ks.y = {0.0, 1.0};
  ks.d0_raw = 0.0;
  ks.dK_raw = 0.0;
  sp::CubicSplineCoeffs c = sp::steffen_build(ks);
  sp::EvalResult r = sp::cubic_eval(c, 0.5);
  CHECK(r.y == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(r.log_deriv == doctest::Approx(0.4054651081081644).epsilon(1e-12));
}

TEST_CASE("cubic_eval rejects out-of-range input") {
  sp::CubicSplineCoeffs c = sp::steffen_build(uniform_knots(2));
  CHECK_THROWS_AS(sp::cubic_eval(c, 1.01), NumericError);
  CHECK_THROWS_AS(sp::cubic_eval(c, -0.2), NumericError);
}

TEST_CASE("cubic_eval: bin-edge convention uses the right-hand bin") {
  Rng rng(77);
  sp::KnotSet ks = sp::knots_from_raw(random_theta(10, rng), 4, 1e-3);
  sp::CubicSplineCoeffs c = sp::steffen_build(ks);
  for (int k = 1; k < 4; ++k) {
    // At a knot both bins agree in value (C0) and derivative (C1); the
    // convention is only observable through bin bookkeeping, so check the
    // continuity that makes it safe.
    const double xk = c.x[k];
    sp::EvalResult at = sp::cubic_eval(c, xk);
    sp::EvalResult lo = sp::cubic_eval(c, xk - 1e-12);
    CHECK(at.y == doctest::Approx(lo.y).epsilon(1e-9));
    CHECK(at.y == doctest::Approx(c.y[k]).epsilon(1e-12));
    CHECK(std::exp(at.log_deriv) == doctest::Approx(c.d[k]).epsilon(1e-9));
  }
}

TEST_CASE("C1 continuity at interior knots") {
  Rng rng(501);
  for (int trial = 0; trial < 20; ++trial) {
    int K = 2 + static_cast<int>(rng.below(12));
    sp::CubicSplineCoeffs c =
        sp::steffen_build(sp::knots_from_raw(random_theta(2 * K + 2, rng), K, 1e-3));
    for (int k = 1; k < K; ++k) {
      const double w = c.w[k - 1];
      const double left = (c.a1[k - 1] + (2.0 * c.a2[k - 1]) * w) + (3.0 * c.a3[k - 1]) * (w * w);
      CHECK(left == doctest::Approx(c.d[k]).epsilon(1e-9));
      // value continuity: left-bin polynomial reaches y_k
      const double yl = ((c.a0[k - 1] + c.a1[k - 1] * w) + c.a2[k - 1] * (w * w)) +
                        c.a3[k - 1] * ((w * w) * w);
      CHECK(yl == doctest::Approx(c.y[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("monotonicity of random cubic splines") {
  Rng rng(601);
  for (int trial = 0; trial < 10; ++trial) {
    int K = 1 + static_cast<int>(rng.below(16));
    sp::CubicSplineCoeffs c =
        sp::steffen_build(sp::knots_from_raw(random_theta(2 * K + 2, rng, 5.0), K, 1e-3));
    double prev = -1.0;
    for (int i = 0; i <= 400; ++i) {
      double y = sp::cubic_eval(c, i / 400.0).y;
      CHECK(y > prev);
      prev = y;
    }
  }
}

TEST_CASE("log_deriv matches a central finite difference") {
  Rng rng(701);
  for (int trial = 0; trial < 10; ++trial) {
    int K = 2 + static_cast<int>(rng.below(10));
    sp::CubicSplineCoeffs c =
        sp::steffen_build(sp::knots_from_raw(random_theta(2 * K + 2, rng), K, 1e-3));
    for (int i = 0; i < 20; ++i) {
      double x = rng.uniform(0.05, 0.95);
      // keep away from knots so the FD stencil stays inside one bin
      bool near_knot = false;
      for (double xk : c.x) {
        if (std::fabs(x - xk) < 1e-5) near_knot = true;
      }
      if (near_knot) continue;
      const double h = 1e-6;
      double fd = (sp::cubic_eval(c, x + h).y - sp::cubic_eval(c, x - h).y) / (2.0 * h);
      double an = std::exp(sp::cubic_eval(c, x).log_deriv);
      CHECK(an == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("cubic_invert: identity and ease-curve examples") {
  sp::CubicSplineCoeffs ident = sp::steffen_build(uniform_knots(4));
  CHECK(sp::cubic_invert(ident, 0.7) == doctest::Approx(0.7).epsilon(1e-12));

  sp::KnotSet ks;
  ks.K = 1;
  ks.x = {0.0, 1.0};
  ks.y = {0.0, 1.0};
  ks.d0_raw = 0.0;
  ks.dK_raw = 0.0;
  sp::CubicSplineCoeffs ease = sp::steffen_build(ks);
  double x = sp::cubic_invert(ease, 0.5);
  CHECK(x == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(sp::cubic_eval(ease, x).y == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("cubic round trip across bin counts") {
  Rng rng(801);
  sp::InvertStats stats;
  for (int K : {1, 2, 10, 128}) {
    for (int trial = 0; trial < 5; ++trial) {
      sp::CubicSplineCoeffs c =
          sp::steffen_build(sp::knots_from_raw(random_theta(2 * K + 2, rng, 4.0), K, 1e-3));
      for (int i = 0; i < 400; ++i) {
        double x = rng.uniform();
        double y = sp::cubic_eval(c, x).y;
        double back = sp::cubic_invert(c, y, &stats);
        CHECK(std::fabs(back - x) <= 1e-9);
      }
    }
  }
  CHECK(stats.exhaustions == 0);
}

TEST_CASE("cubic_invert survives near-degenerate leading coefficients") {
  // Identity-like splines have a2 ~ a3 ~ 0, driving the solver through the
  // quadratic/linear fallthrough.
  sp::CubicSplineCoeffs ident = sp::steffen_build(uniform_knots(3));
  sp::InvertStats stats;
  for (int i = 0; i <= 1000; ++i) {
    double y = i / 1000.0;
    double x = sp::cubic_invert(ident, y, &stats);
    CHECK(std::fabs(sp::cubic_eval(ident, x).y - y) <= 1e-9);
  }
  CHECK(stats.exhaustions == 0);
}

TEST_CASE("quadratic_build: zero logits give the uniform density") {
  std::vector<double> theta(5, 0.0);  // K=2 -> 2K+1 = 5
  sp::QuadraticSplineParams p = sp::quadratic_build(theta, 2, 0.0);
  CHECK(p.w[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(p.w[1] == doctest::Approx(0.5).epsilon(1e-14));
  for (int k = 0; k <= 2; ++k) CHECK(p.v[k] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("quadratic_build: hand-normalized vertex values") {
  std::vector<double> theta = {0.0, 0.0, std::log(3.0)};  // K=1
  sp::QuadraticSplineParams p = sp::quadratic_build(theta, 1, 0.0);
  CHECK(p.v[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(p.v[1] == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(p.y[1] == 1.0);
}

TEST_CASE("quadratic_build validates input") {
  Rng rng(31);
  CHECK_THROWS_AS(sp::quadratic_build(random_theta(4, rng), 1, 1e-3), NumericError);
  std::vector<double> bad(5, 0.0);
  bad[2] = INFINITY;
  CHECK_THROWS_AS(sp::quadratic_build(bad, 2, 1e-3), NumericError);
}

TEST_CASE("quadratic_transform: uniform params are the identity") {
  std::vector<double> theta(5, 0.0);
  sp::QuadraticSplineParams p = sp::quadratic_build(theta, 2, 0.0);
  sp::EvalResult r = sp::quadratic_transform(p, 0.42, false);
  CHECK(r.y == doctest::Approx(0.42).epsilon(1e-14));
  CHECK(r.log_deriv == doctest::Approx(0.0).epsilon(1e-13));
}

TEST_CASE("quadratic_transform: hand-evaluated bin formula") {
  std::vector<double> theta = {0.0, 0.0, std::log(3.0)};
  sp::QuadraticSplineParams p = sp::quadratic_build(theta, 1, 0.0);
  sp::EvalResult r = sp::quadratic_transform(p, 0.5, false);
  CHECK(r.y == doctest::Approx(0.375).epsilon(1e-14));
  CHECK(r.log_deriv == doctest::Approx(0.0).epsilon(1e-13));
}

TEST_CASE("quadratic spline endpoints and continuity") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    int K = 1 + static_cast<int>(rng.below(12));
    sp::QuadraticSplineParams p =
        sp::quadratic_build(random_theta(2 * K + 1, rng), K, 1e-3);
    CHECK(sp::quadratic_transform(p, 0.0, false).y == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(sp::quadratic_transform(p, 1.0, false).y == doctest::Approx(1.0).epsilon(1e-12));
    // derivative at interior knots equals v_k from both sides
    for (int k = 1; k < K; ++k) {
      double lo = std::exp(sp::quadratic_transform(p, p.x[k] - 1e-10, false).log_deriv);
      double hi = std::exp(sp::quadratic_transform(p, p.x[k], false).log_deriv);
      // the one-sided probe sits 1e-10 inside the left bin, where the linear
      // derivative has already moved by up to (dv/w)*1e-10
      CHECK(lo == doctest::Approx(p.v[k]).epsilon(1e-5));
      CHECK(hi == doctest::Approx(p.v[k]).epsilon(1e-9));
    }
  }
}

TEST_CASE("quadratic round trip across bin counts") {
  Rng rng(901);
  for (int K : {1, 2, 10, 128}) {
    for (int trial = 0; trial < 5; ++trial) {
      sp::QuadraticSplineParams p =
          sp::quadratic_build(random_theta(2 * K + 1, rng, 4.0), K, 1e-3);
      for (int i = 0; i < 400; ++i) {
        double x = rng.uniform();
        sp::EvalResult fwd = sp::quadratic_transform(p, x, false);
        sp::EvalResult bak = sp::quadratic_transform(p, fwd.y, true);
        CHECK(std::fabs(bak.y - x) <= 1e-9);
        CHECK(bak.log_deriv == doctest::Approx(-fwd.log_deriv).epsilon(1e-7));
      }
    }
  }
}
