#pragma once

#include <cstddef>
#include <vector>

#include "splineflow/mat.hpp"

// Monotone splines on [0,1] -> [0,1]: Steffen cubic interpolation and the
// piecewise-quadratic ablation. This is the plain (per-spline, scalar)
// reference path; spline_ops.hpp holds the batched tape twin. The arithmetic
// here is written in the same operation order as the tape path so the two
// agree bit for bit.

namespace splineflow::splines {

inline constexpr double kDefaultMinBin = 1e-3;
inline constexpr double kDerivFloor = 1e-3;
// Leading coefficients below this fall through to a lower-degree solve.
inline constexpr double kDegenerateCoeff = 1e-12;
// Inversion is accepted when the forward residual is below this.
inline constexpr double kInvertTol = 1e-9;
inline constexpr int kBisectionCap = 200;

struct KnotSet {
  int K = 0;
  std::vector<double> x, y;  // K+1 knots each; x0=y0=0, xK=yK=1
  double d0_raw = 1.0;       // proposed boundary derivatives (pre-clamp)
  double dK_raw = 1.0;
};

struct CubicSplineCoeffs {
  int K = 0;
  std::vector<double> x, y;           // knots, K+1
  std::vector<double> w, s;           // per bin, K
  std::vector<double> d;              // per knot, K+1
  std::vector<double> a0, a1, a2, a3; // per bin, K
};

struct QuadraticSplineParams {
  int K = 0;
  std::vector<double> x;  // knots, K+1
  std::vector<double> w;  // widths, K
  std::vector<double> v;  // normalized vertex densities, K+1
  std::vector<double> y;  // map values at knots, K+1
};

struct EvalResult {
  double y = 0.0;
  double log_deriv = 0.0;
};

// Counters from the inversion slow path. bisection_fallbacks counts inputs
// where the analytic root failed verification; exhaustions counts inputs
// where even bisection could not reach tolerance (must stay zero).
struct InvertStats {
  long long bisection_fallbacks = 0;
  long long exhaustions = 0;
};

// Scalar softplus written in the exact operation order of the tape composite.
double softplus_scalar(double x);

KnotSet knots_from_raw(const std::vector<double>& theta_raw, int K, double min_bin);
CubicSplineCoeffs steffen_build(const KnotSet& knots);
EvalResult cubic_eval(const CubicSplineCoeffs& c, double x);
double cubic_invert(const CubicSplineCoeffs& c, double y, InvertStats* stats = nullptr);

QuadraticSplineParams quadratic_build(const std::vector<double>& theta_raw, int K,
                                      double min_bin);
EvalResult quadratic_transform(const QuadraticSplineParams& p, double value, bool inverse);

// Bin index under the shared convention: a value equal to knot k belongs to
// bin k (the right-hand bin), except that 1 belongs to the last bin.
std::size_t find_bin(const std::vector<double>& knots, double value);

}  // namespace splineflow::splines
