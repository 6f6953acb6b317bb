#pragma once

#include "splineflow/autodiff.hpp"
#include "splineflow/mat.hpp"
#include "splineflow/splines.hpp"

// Batched spline transforms. The tape functions build the full spline
// construction out of catalogue ops so gradients reach the raw parameters;
// the plain functions run the per-spline reference path row by row. Both
// perform the same arithmetic in the same order, so their forward values are
// bit-identical (asserted in the tests).

namespace splineflow::spline_ops {

struct TapeSplineResult {
  ad::Value y;        // [N, dims]
  ad::Value log_det;  // [N, 1], summed over dims
};

struct PlainSplineResult {
  Mat y;        // [N, dims]
  Mat log_det;  // [N, 1]
};

// raw: [N, dims*(2K+2)] (or [1, ...] broadcast over the batch); x: [N, dims]
// with entries in [0,1].
TapeSplineResult cubic_forward(ad::Tape& t, ad::Value raw, ad::Value x, int K,
                               double min_bin);
// raw: [N, dims*(2K+1)] (or [1, ...]).
TapeSplineResult quadratic_forward(ad::Tape& t, ad::Value raw, ad::Value x, int K,
                                   double min_bin);

PlainSplineResult cubic_apply_plain(const Mat& raw, const Mat& x, int K, double min_bin,
                                    bool inverse, splines::InvertStats* stats = nullptr);
PlainSplineResult quadratic_apply_plain(const Mat& raw, const Mat& x, int K,
                                        double min_bin, bool inverse);

}  // namespace splineflow::spline_ops
