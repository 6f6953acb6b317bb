#pragma once

#include <cmath>
#include <cstddef>

#include "splineflow/mat.hpp"

// Array math used by the tape ops and the plain spline path. Every kernel has
// a serial and an OpenMP driver around the same per-row core, so parallel
// results are bit-identical to serial ones (asserted by the kernel tests).
// Reductions use a fixed blocking scheme for the same reason.

namespace splineflow::kernels {

bool parallel_enabled();
void set_parallel(bool on);
// n <= 0 leaves the OpenMP default untouched.
void set_max_threads(int n);

enum class BinaryOp { add, sub, mul, div, min };
enum class UnaryOp { neg, exp, log, sigmoid, relu };

// ---- scalar cores, shared with the per-spline reference path ----

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double relu_scalar(double x) { return x > 0.0 ? x : 0.0; }

inline double min_scalar(double a, double b) { return b < a ? b : a; }

// ---- row cores, shared with the per-spline reference path ----

void softmax_row(const double* in, double* out, std::size_t n);
void cumsum_row(const double* in, double* out, std::size_t n);
void rev_cumsum_row(const double* in, double* out, std::size_t n);
double sum_row(const double* in, std::size_t n);

// ---- broadcastable elementwise ----

// Numpy-style broadcast over both axes; throws NumericError naming `what` on
// incompatible shapes.
void broadcast_shape(const Mat& a, const Mat& b, std::size_t& rows, std::size_t& cols,
                     const char* what);
void ew_binary(BinaryOp op, const Mat& a, const Mat& b, Mat& out);
void ew_unary(UnaryOp op, const Mat& a, Mat& out);
void pow_elements(const Mat& a, double exponent, Mat& out);
// mask selects a where nonzero, b otherwise; all three broadcast together.
void where_select(const Mat& mask, const Mat& a, const Mat& b, Mat& out);

// ---- reductions ----

double sum_all(const Mat& a);
void row_sum(const Mat& a, Mat& out);  // out is rows x 1
// Sum `g` over any axes broadcast relative to out's shape and add into out.
void reduce_add_to(const Mat& g, Mat& out);

// ---- structured ----

void softmax_rows(const Mat& a, Mat& out);
void cumsum_rows(const Mat& a, Mat& out);
void rev_cumsum_rows(const Mat& a, Mat& out);
// out = op(a) * op(b) where op transposes when the flag is set.
void matmul(const Mat& a, bool trans_a, const Mat& b, bool trans_b, Mat& out);
// out += op(a) * op(b)
void matmul_acc(const Mat& a, bool trans_a, const Mat& b, bool trans_b, Mat& out);
void concat_cols(const Mat& a, const Mat& b, Mat& out);
void slice_cols(const Mat& a, std::size_t begin, std::size_t end, Mat& out);
// dst[:, begin .. begin+src.cols) += src
void add_into_cols(Mat& dst, std::size_t begin, const Mat& src);

}  // namespace splineflow::kernels
