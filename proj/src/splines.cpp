#include "splineflow/splines.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "splineflow/errors.hpp"
#include "splineflow/kernels.hpp"

namespace splineflow::splines {

namespace {

// Slack for values that left a previous layer a few ulps outside [0,1].
constexpr double kRangeSlack = 1e-9;

double clamp_unit(double v, const char* what) {
  if (v < -kRangeSlack || v > 1.0 + kRangeSlack) {
    throw NumericError(std::string(what) + ": value " + std::to_string(v) +
                       " outside [0,1]");
  }
  return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

void check_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(what) + ": non-finite parameter entry");
    }
  }
}

// widths[i] = min_bin + (1 - K*min_bin) * softmax(logits)[i]; knots are the
// cumulative sums with the end points pinned to exactly 0 and 1. Shared by
// the cubic and quadratic builders; the tape path performs the same steps.
void widths_and_knots(const double* logits, int K, double min_bin,
                      std::vector<double>& widths, std::vector<double>& knots) {
  widths.resize(K);
  kernels::softmax_row(logits, widths.data(), K);
  const double scale = 1.0 - static_cast<double>(K) * min_bin;
  for (int i = 0; i < K; ++i) widths[i] = min_bin + scale * widths[i];
  std::vector<double> cum(K);
  kernels::cumsum_row(widths.data(), cum.data(), K);
  knots.resize(K + 1);
  knots[0] = 0.0;
  for (int k = 1; k < K; ++k) knots[k] = cum[k - 1];
  knots[K] = 1.0;
}

}  // namespace

double softplus_scalar(double x) {
  // Same operation sequence as the tape composite so both paths agree exactly.
  const double rx = kernels::relu_scalar(x);
  const double ax = rx + kernels::relu_scalar(-x);
  return rx + std::log(1.0 + std::exp(-ax));
}

std::size_t find_bin(const std::vector<double>& knots, double value) {
  const std::size_t K = knots.size() - 1;
  if (value >= knots[K]) return K - 1;
  auto it = std::upper_bound(knots.begin(), knots.end(), value);
  std::size_t idx = static_cast<std::size_t>(it - knots.begin());
  return idx == 0 ? 0 : idx - 1;
}

KnotSet knots_from_raw(const std::vector<double>& theta_raw, int K, double min_bin) {
  if (K < 1) throw NumericError("knots_from_raw: K must be >= 1");
  if (theta_raw.size() != static_cast<std::size_t>(2 * K + 2)) {
    throw NumericError("knots_from_raw: expected length " + std::to_string(2 * K + 2) +
                       ", got " + std::to_string(theta_raw.size()));
  }
  if (!(min_bin >= 0.0) || min_bin * K >= 1.0) {
    throw NumericError("knots_from_raw: min_bin must lie in [0, 1/K)");
  }
  check_finite(theta_raw, "knots_from_raw");

  KnotSet ks;
  ks.K = K;
  std::vector<double> w;
  widths_and_knots(theta_raw.data(), K, min_bin, w, ks.x);
  std::vector<double> h;
  widths_and_knots(theta_raw.data() + K, K, min_bin, h, ks.y);
  ks.d0_raw = softplus_scalar(theta_raw[2 * K]) + kDerivFloor;
  ks.dK_raw = softplus_scalar(theta_raw[2 * K + 1]) + kDerivFloor;
  return ks;
}

CubicSplineCoeffs steffen_build(const KnotSet& ks) {
  const int K = ks.K;
  if (K < 1 || ks.x.size() != static_cast<std::size_t>(K + 1) ||
      ks.y.size() != static_cast<std::size_t>(K + 1)) {
    throw NumericError("steffen_build: inconsistent knot count");
  }
  if (ks.x[0] != 0.0 || ks.y[0] != 0.0 || ks.x[K] != 1.0 || ks.y[K] != 1.0) {
    throw NumericError("steffen_build: knots must start at (0,0) and end at (1,1)");
  }
  for (int k = 0; k < K; ++k) {
    if (!(ks.x[k + 1] > ks.x[k]) || !(ks.y[k + 1] > ks.y[k])) {
      throw NumericError("steffen_build: knots must be strictly increasing");
    }
  }
  if (!(ks.d0_raw >= 0.0) || !(ks.dK_raw >= 0.0) || !std::isfinite(ks.d0_raw) ||
      !std::isfinite(ks.dK_raw)) {
    throw NumericError("steffen_build: boundary derivative proposals must be >= 0");
  }

  CubicSplineCoeffs c;
  c.K = K;
  c.x = ks.x;
  c.y = ks.y;
  c.w.resize(K);
  c.s.resize(K);
  for (int k = 0; k < K; ++k) {
    c.w[k] = ks.x[k + 1] - ks.x[k];
    c.s[k] = (ks.y[k + 1] - ks.y[k]) / c.w[k];
  }

  c.d.resize(K + 1);
  // Interior knots: clamp the weighted-harmonic proposal p_k so the Steffen
  // monotonicity bound d_k <= 2 min(s_{k-1}, s_k) always holds. min-of-min is
  // equivalent to the piecewise rule "p_k if within the bound, else the bound".
  for (int k = 1; k < K; ++k) {
    const double sL = c.s[k - 1], sR = c.s[k];
    const double wL = c.w[k - 1], wR = c.w[k];
    const double p = (sL * wR + sR * wL) / (wL + wR);
    c.d[k] = kernels::min_scalar(p, 2.0 * kernels::min_scalar(sL, sR));
  }
  c.d[0] = kernels::min_scalar(ks.d0_raw, 2.0 * c.s[0]);
  c.d[K] = kernels::min_scalar(ks.dK_raw, 2.0 * c.s[K - 1]);

  c.a0.resize(K);
  c.a1.resize(K);
  c.a2.resize(K);
  c.a3.resize(K);
  for (int k = 0; k < K; ++k) {
    c.a0[k] = c.y[k];
    c.a1[k] = c.d[k];
    c.a2[k] = (3.0 * c.s[k] - 2.0 * c.d[k] - c.d[k + 1]) / c.w[k];
    c.a3[k] = ((c.d[k] + c.d[k + 1]) - 2.0 * c.s[k]) / (c.w[k] * c.w[k]);
  }
  return c;
}

EvalResult cubic_eval(const CubicSplineCoeffs& c, double x) {
  x = clamp_unit(x, "cubic_eval");
  const std::size_t k = find_bin(c.x, x);
  const double xi = x - c.x[k];
  const double xi2 = xi * xi;
  const double xi3 = xi2 * xi;
  EvalResult r;
  r.y = ((c.a0[k] + c.a1[k] * xi) + c.a2[k] * xi2) + c.a3[k] * xi3;
  const double deriv = (c.a1[k] + (2.0 * c.a2[k]) * xi) + (3.0 * c.a3[k]) * xi2;
  if (!(deriv > 0.0)) {
    throw NumericError("cubic_eval: non-positive derivative " + std::to_string(deriv) +
                       " at x=" + std::to_string(x) + " (construction bug)");
  }
  r.log_deriv = std::log(deriv);
  return r;
}

namespace {

double poly_eval(double A3, double A2, double A1, double A0, double xi) {
  return ((A0 + A1 * xi) + A2 * (xi * xi)) + A3 * ((xi * xi) * xi);
}

double poly_deriv(double A3, double A2, double A1, double xi) {
  return (A1 + (2.0 * A2) * xi) + (3.0 * A3) * (xi * xi);
}

// Analytic root of A3 xi^3 + A2 xi^2 + A1 xi + A0 on [0, w]. Near-degenerate
// leading coefficients fall through to the quadratic / linear formulas. The
// cubic branches follow Blinn's treatment: Cardano with the sign chosen to
// avoid cancellation when there is one real root, the atan2 trigonometric
// form when there are three.
bool analytic_root(double A3, double A2, double A1, double A0, double w, double* out) {
  if (std::fabs(A3) < kDegenerateCoeff) {
    if (std::fabs(A2) < kDegenerateCoeff) {
      if (std::fabs(A1) < kDegenerateCoeff) return false;  // flat: let bisection decide
      *out = -A0 / A1;
      return true;
    }
    const double disc = A1 * A1 - 4.0 * A2 * A0;
    if (disc < 0.0) return false;
    const double sq = std::sqrt(disc);
    const double q = -0.5 * (A1 + std::copysign(sq, A1));
    double best = -1.0;
    bool found = false;
    for (double r : {q / A2, q != 0.0 ? A0 / q : -1.0}) {
      if (!std::isfinite(r)) continue;
      if (r >= -kRangeSlack && r <= w + kRangeSlack) {
        if (!found || std::fabs(poly_eval(0.0, A2, A1, A0, r)) <
                          std::fabs(poly_eval(0.0, A2, A1, A0, best))) {
          best = r;
          found = true;
        }
      }
    }
    if (!found) return false;
    *out = best;
    return true;
  }

  const double A = A3;
  const double B = A2 / 3.0;
  const double C = A1 / 3.0;
  const double D = A0;
  const double d1 = A * C - B * B;
  const double d2 = A * D - B * C;
  const double d3 = B * D - C * C;
  const double discr = 4.0 * d1 * d3 - d2 * d2;
  const double A_2 = A * A;
  const double p = d1 / A_2;                       // depressed: t^3 + 3 p t + q
  const double q = (A * d2 - 2.0 * B * d1) / (A_2 * A);
  const double shift = B / A;                      // xi = t - shift

  if (discr < 0.0) {
    // one real root; q^2 + 4 p^3 = -discr / A^4
    const double r = std::sqrt(-discr) / A_2;
    const double u3 = 0.5 * (-q - std::copysign(r, q));
    const double u = std::cbrt(u3);
    const double t = u == 0.0 ? 0.0 : u - p / u;
    *out = t - shift;
    return true;
  }

  const double mp = -p;  // >= 0 whenever discr >= 0
  if (!(mp > 0.0)) {
    *out = -shift;  // triple root at t = 0
    return true;
  }
  const double m = 2.0 * std::sqrt(mp);
  const double theta3 = std::atan2(std::sqrt(discr) / A_2, -q);
  double best = 0.0;
  double best_res = -1.0;
  for (int j = 0; j < 3; ++j) {
    const double t = m * std::cos((theta3 + 2.0 * M_PI * j) / 3.0);
    const double cand = t - shift;
    if (cand < -kRangeSlack - 1e-3 * w || cand > w * (1.0 + 1e-3) + kRangeSlack) continue;
    const double res = std::fabs(poly_eval(A3, A2, A1, A0, cand));
    if (best_res < 0.0 || res < best_res) {
      best_res = res;
      best = cand;
    }
  }
  if (best_res < 0.0) {
    // All three real roots fell outside the bin (possible only through
    // rounding); let the caller bisect.
    return false;
  }
  *out = best;
  return true;
}

}  // namespace

double cubic_invert(const CubicSplineCoeffs& c, double y, InvertStats* stats) {
  y = clamp_unit(y, "cubic_invert");
  const std::size_t k = find_bin(c.y, y);
  const double w = c.w[k];
  const double A3 = c.a3[k], A2 = c.a2[k], A1 = c.a1[k];
  const double A0 = c.a0[k] - y;

  double xi = 0.0;
  bool have = analytic_root(A3, A2, A1, A0, w, &xi);
  if (have) {
    xi = std::clamp(xi, 0.0, w);
    // A couple of Newton steps absorb rounding from the closed forms.
    for (int it = 0; it < 3; ++it) {
      const double f = poly_eval(A3, A2, A1, A0, xi);
      if (std::fabs(f) <= 0.25 * kInvertTol) break;
      const double fp = poly_deriv(A3, A2, A1, xi);
      if (!(fp > 0.0)) break;
      xi = std::clamp(xi - f / fp, 0.0, w);
    }
  }

  if (!have || std::fabs(poly_eval(A3, A2, A1, A0, xi)) > kInvertTol) {
    if (stats) ++stats->bisection_fallbacks;
    // Monotonicity brackets the root: f(0) = y_k - y <= 0 <= f(w).
    double lo = 0.0, hi = w;
    double flo = poly_eval(A3, A2, A1, A0, lo);
    double fhi = poly_eval(A3, A2, A1, A0, hi);
    if (flo >= 0.0) {
      xi = lo;
    } else if (fhi <= 0.0) {
      xi = hi;
    } else {
      bool ok = false;
      for (int it = 0; it < kBisectionCap; ++it) {
        xi = 0.5 * (lo + hi);
        const double f = poly_eval(A3, A2, A1, A0, xi);
        if (std::fabs(f) <= kInvertTol) {
          ok = true;
          break;
        }
        if (f < 0.0) {
          lo = xi;
        } else {
          hi = xi;
        }
      }
      if (!ok && stats) ++stats->exhaustions;
    }
  }

  double x = c.x[k] + xi;
  return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x);
}

QuadraticSplineParams quadratic_build(const std::vector<double>& theta_raw, int K,
                                      double min_bin) {
  if (K < 1) throw NumericError("quadratic_build: K must be >= 1");
  if (theta_raw.size() != static_cast<std::size_t>(2 * K + 1)) {
    throw NumericError("quadratic_build: expected length " + std::to_string(2 * K + 1) +
                       ", got " + std::to_string(theta_raw.size()));
  }
  if (!(min_bin >= 0.0) || min_bin * K >= 1.0) {
    throw NumericError("quadratic_build: min_bin must lie in [0, 1/K)");
  }
  check_finite(theta_raw, "quadratic_build");

  QuadraticSplineParams p;
  p.K = K;
  widths_and_knots(theta_raw.data(), K, min_bin, p.w, p.x);

  // Vertex densities: exponentiate, then normalize so the trapezoid areas sum
  // to one — the map is then the CDF of a piecewise-linear density on [0,1].
  p.v.resize(K + 1);
  for (int k = 0; k <= K; ++k) p.v[k] = std::exp(theta_raw[K + k]);
  double z = 0.0;
  for (int k = 0; k < K; ++k) z += (p.w[k] * (p.v[k] + p.v[k + 1])) * 0.5;
  for (int k = 0; k <= K; ++k) p.v[k] = p.v[k] / z;

  std::vector<double> area(K);
  for (int k = 0; k < K; ++k) area[k] = (p.w[k] * (p.v[k] + p.v[k + 1])) * 0.5;
  std::vector<double> cum(K);
  kernels::cumsum_row(area.data(), cum.data(), K);
  p.y.resize(K + 1);
  p.y[0] = 0.0;
  for (int k = 1; k < K; ++k) p.y[k] = cum[k - 1];
  p.y[K] = 1.0;
  return p;
}

namespace {

// v_k + dv*xi/w rearranged so the data-dependent term is always added, never
// subtracted: measured from the bottom knot when the density rises across the
// bin and from the top knot when it falls. Algebraically identical either
// way; the one-sided form loses all precision when the vertex densities span
// many orders of magnitude.
double quadratic_deriv(const QuadraticSplineParams& p, std::size_t k, double xi) {
  const double dv = p.v[k + 1] - p.v[k];
  const double w = p.w[k];
  if (dv >= 0.0) return p.v[k] + (dv * xi) / w;
  return p.v[k + 1] - (dv * (w - xi)) / w;
}

}  // namespace

EvalResult quadratic_transform(const QuadraticSplineParams& p, double value, bool inverse) {
  EvalResult r;
  if (!inverse) {
    const double x = clamp_unit(value, "quadratic_transform");
    const std::size_t k = find_bin(p.x, x);
    const double xi = x - p.x[k];
    const double dv = p.v[k + 1] - p.v[k];
    const double w = p.w[k];
    r.y = (p.y[k] + p.v[k] * xi) + (dv * (xi * xi)) / (2.0 * w);
    r.log_deriv = std::log(quadratic_deriv(p, k, xi));
    return r;
  }

  const double y = clamp_unit(value, "quadratic_transform");
  const std::size_t k = find_bin(p.y, y);
  const double dv = p.v[k + 1] - p.v[k];
  const double w = p.w[k];
  double xi;
  if (std::fabs(dv) < kDegenerateCoeff) {
    xi = (y - p.y[k]) / p.v[k];
  } else if (dv > 0.0) {
    // Root of (dv/2w) xi^2 + v_k xi - dy = 0. Every term of the discriminant
    // and the denominator is nonnegative, so nothing cancels.
    const double dy = y - p.y[k];
    const double disc = p.v[k] * p.v[k] + 2.0 * dv * dy / w;
    xi = 2.0 * dy / (p.v[k] + std::sqrt(disc));
  } else {
    // Falling density: the bottom-end discriminant cancels catastrophically,
    // but the same solve from the top knot (in u = w - xi) is additive again.
    const double dyp = p.y[k + 1] - y;
    const double disc = p.v[k + 1] * p.v[k + 1] - 2.0 * dv * dyp / w;
    xi = w - 2.0 * dyp / (p.v[k + 1] + std::sqrt(disc));
  }
  xi = std::clamp(xi, 0.0, w);
  r.y = p.x[k] + xi;
  r.log_deriv = -std::log(quadratic_deriv(p, k, xi));
  return r;
}

}  // namespace splineflow::splines
