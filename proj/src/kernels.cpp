#include "splineflow/kernels.hpp"

#include <omp.h>

#include <atomic>
#include <cstring>

#include "splineflow/errors.hpp"

namespace splineflow::kernels {

namespace {

std::atomic<bool> g_parallel{true};

// Work below this many elements is not worth a parallel region.
constexpr std::size_t kParallelThreshold = 16384;

bool use_parallel(std::size_t work) {
  return g_parallel.load(std::memory_order_relaxed) && work >= kParallelThreshold &&
         omp_get_max_threads() > 1;
}

}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }
void set_max_threads(int n) {
  if (n > 0) omp_set_num_threads(n);
}

// ---------------------------------------------------------------------------
// row cores

void softmax_row(const double* in, double* out, std::size_t n) {
  double mx = in[0];
  for (std::size_t j = 1; j < n; ++j) {
    if (in[j] > mx) mx = in[j];
  }
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] - mx);
    total += out[j];
  }
  double inv = 1.0 / total;
  for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
}

void cumsum_row(const double* in, double* out, std::size_t n) {
  double acc = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    acc += in[j];
    out[j] = acc;
  }
}

void rev_cumsum_row(const double* in, double* out, std::size_t n) {
  double acc = 0.0;
  for (std::size_t j = n; j-- > 0;) {
    acc += in[j];
    out[j] = acc;
  }
}

double sum_row(const double* in, std::size_t n) {
  double acc = 0.0;
  for (std::size_t j = 0; j < n; ++j) acc += in[j];
  return acc;
}

// ---------------------------------------------------------------------------
// broadcastable elementwise

void broadcast_shape(const Mat& a, const Mat& b, std::size_t& rows, std::size_t& cols,
                     const char* what) {
  auto merge = [&](std::size_t x, std::size_t y) -> std::size_t {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw NumericError(std::string(what) + ": incompatible shapes " + a.shape_str() +
                       " vs " + b.shape_str());
  };
  rows = merge(a.rows(), b.rows());
  cols = merge(a.cols(), b.cols());
}

namespace {

template <class F>
void ew_binary_row(F f, const double* pa, std::size_t sa, const double* pb, std::size_t sb,
                   double* out, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) out[j] = f(pa[j * sa], pb[j * sb]);
}

template <class F>
void ew_binary_impl(F f, const Mat& a, const Mat& b, Mat& out) {
  const std::size_t rows = out.rows(), cols = out.cols();
  const std::size_t sa = a.cols() == 1 ? 0 : 1;
  const std::size_t sb = b.cols() == 1 ? 0 : 1;
  const std::size_t ra = a.rows() == 1 ? 0 : 1;
  const std::size_t rb = b.rows() == 1 ? 0 : 1;
  if (use_parallel(rows * cols) && rows > 1) {
#pragma omp parallel for schedule(static)
    for (long r = 0; r < static_cast<long>(rows); ++r) {
      ew_binary_row(f, a.row_ptr(r * ra), sa, b.row_ptr(r * rb), sb, out.row_ptr(r), cols);
    }
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      ew_binary_row(f, a.row_ptr(r * ra), sa, b.row_ptr(r * rb), sb, out.row_ptr(r), cols);
    }
  }
}

}  // namespace

void ew_binary(BinaryOp op, const Mat& a, const Mat& b, Mat& out) {
  switch (op) {
    case BinaryOp::add:
      ew_binary_impl([](double x, double y) { return x + y; }, a, b, out);
      break;
    case BinaryOp::sub:
      ew_binary_impl([](double x, double y) { return x - y; }, a, b, out);
      break;
    case BinaryOp::mul:
      ew_binary_impl([](double x, double y) { return x * y; }, a, b, out);
      break;
    case BinaryOp::div:
      ew_binary_impl([](double x, double y) { return x / y; }, a, b, out);
      break;
    case BinaryOp::min:
      ew_binary_impl([](double x, double y) { return min_scalar(x, y); }, a, b, out);
      break;
  }
}

namespace {

template <class F>
void ew_unary_impl(F f, const Mat& a, Mat& out) {
  const std::size_t n = a.size();
  const double* pa = a.data();
  double* po = out.data();
  if (use_parallel(n)) {
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(n); ++i) po[i] = f(pa[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  }
}

}  // namespace

void ew_unary(UnaryOp op, const Mat& a, Mat& out) {
  switch (op) {
    case UnaryOp::neg:
      ew_unary_impl([](double x) { return -x; }, a, out);
      break;
    case UnaryOp::exp:
      ew_unary_impl([](double x) { return std::exp(x); }, a, out);
      break;
    case UnaryOp::log:
      ew_unary_impl([](double x) { return std::log(x); }, a, out);
      break;
    case UnaryOp::sigmoid:
      ew_unary_impl([](double x) { return sigmoid_scalar(x); }, a, out);
      break;
    case UnaryOp::relu:
      ew_unary_impl([](double x) { return relu_scalar(x); }, a, out);
      break;
  }
}

void pow_elements(const Mat& a, double exponent, Mat& out) {
  ew_unary_impl([exponent](double x) { return std::pow(x, exponent); }, a, out);
}

void where_select(const Mat& mask, const Mat& a, const Mat& b, Mat& out) {
  const std::size_t rows = out.rows(), cols = out.cols();
  const std::size_t sm = mask.cols() == 1 ? 0 : 1, rm = mask.rows() == 1 ? 0 : 1;
  const std::size_t sa = a.cols() == 1 ? 0 : 1, ra = a.rows() == 1 ? 0 : 1;
  const std::size_t sb = b.cols() == 1 ? 0 : 1, rb = b.rows() == 1 ? 0 : 1;
  auto row_core = [&](std::size_t r) {
    const double* pm = mask.row_ptr(r * rm);
    const double* pa = a.row_ptr(r * ra);
    const double* pb = b.row_ptr(r * rb);
    double* po = out.row_ptr(r);
    for (std::size_t j = 0; j < cols; ++j) {
      po[j] = pm[j * sm] != 0.0 ? pa[j * sa] : pb[j * sb];
    }
  };
  if (use_parallel(rows * cols) && rows > 1) {
#pragma omp parallel for schedule(static)
    for (long r = 0; r < static_cast<long>(rows); ++r) row_core(r);
  } else {
    for (std::size_t r = 0; r < rows; ++r) row_core(r);
  }
}

// ---------------------------------------------------------------------------
// reductions

namespace {

constexpr std::size_t kSumBlock = 1024;

}  // namespace

double sum_all(const Mat& a) {
  // Fixed-size blocked accumulation: the grouping (and therefore the result)
  // is independent of thread count.
  const std::size_t n = a.size();
  const double* p = a.data();
  const std::size_t nblocks = (n + kSumBlock - 1) / kSumBlock;
  if (nblocks <= 1) return sum_row(p, n);
  std::vector<double> partial(nblocks);
  if (use_parallel(n)) {
#pragma omp parallel for schedule(static)
    for (long blk = 0; blk < static_cast<long>(nblocks); ++blk) {
      const std::size_t lo = blk * kSumBlock;
      const std::size_t hi = lo + kSumBlock < n ? lo + kSumBlock : n;
      partial[blk] = sum_row(p + lo, hi - lo);
    }
  } else {
    for (std::size_t blk = 0; blk < nblocks; ++blk) {
      const std::size_t lo = blk * kSumBlock;
      const std::size_t hi = lo + kSumBlock < n ? lo + kSumBlock : n;
      partial[blk] = sum_row(p + lo, hi - lo);
    }
  }
  return sum_row(partial.data(), nblocks);
}

void row_sum(const Mat& a, Mat& out) {
  const std::size_t rows = a.rows(), cols = a.cols();
  if (use_parallel(rows * cols) && rows > 1) {
#pragma omp parallel for schedule(static)
    for (long r = 0; r < static_cast<long>(rows); ++r) {
      out.at(r, 0) = sum_row(a.row_ptr(r), cols);
    }
  } else {
    for (std::size_t r = 0; r < rows; ++r) out.at(r, 0) = sum_row(a.row_ptr(r), cols);
  }
}

void reduce_add_to(const Mat& g, Mat& out) {
  if (g.rows() == out.rows() && g.cols() == out.cols()) {
    const std::size_t n = g.size();
    for (std::size_t i = 0; i < n; ++i) out[i] += g[i];
    return;
  }
  if (out.rows() == 1 && out.cols() == 1) {
    out[0] += sum_all(g);
    return;
  }
  if (out.rows() == 1 && out.cols() == g.cols()) {
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const double* pg = g.row_ptr(r);
      for (std::size_t j = 0; j < g.cols(); ++j) out[j] += pg[j];
    }
    return;
  }
  if (out.cols() == 1 && out.rows() == g.rows()) {
    for (std::size_t r = 0; r < g.rows(); ++r) out.at(r, 0) += sum_row(g.row_ptr(r), g.cols());
    return;
  }
  throw NumericError("reduce_add_to: cannot reduce " + g.shape_str() + " onto " +
                     out.shape_str());
}

// ---------------------------------------------------------------------------
// structured

void softmax_rows(const Mat& a, Mat& out) {
  const std::size_t rows = a.rows(), cols = a.cols();
  if (use_parallel(rows * cols) && rows > 1) {
#pragma omp parallel for schedule(static)
    for (long r = 0; r < static_cast<long>(rows); ++r) {
      softmax_row(a.row_ptr(r), out.row_ptr(r), cols);
    }
  } else {
    for (std::size_t r = 0; r < rows; ++r) softmax_row(a.row_ptr(r), out.row_ptr(r), cols);
  }
}

void cumsum_rows(const Mat& a, Mat& out) {
  const std::size_t rows = a.rows(), cols = a.cols();
  if (use_parallel(rows * cols) && rows > 1) {
#pragma omp parallel for schedule(static)
    for (long r = 0; r < static_cast<long>(rows); ++r) {
      cumsum_row(a.row_ptr(r), out.row_ptr(r), cols);
    }
  } else {
    for (std::size_t r = 0; r < rows; ++r) cumsum_row(a.row_ptr(r), out.row_ptr(r), cols);
  }
}

void rev_cumsum_rows(const Mat& a, Mat& out) {
  const std::size_t rows = a.rows(), cols = a.cols();
  if (use_parallel(rows * cols) && rows > 1) {
#pragma omp parallel for schedule(static)
    for (long r = 0; r < static_cast<long>(rows); ++r) {
      rev_cumsum_row(a.row_ptr(r), out.row_ptr(r), cols);
    }
  } else {
    for (std::size_t r = 0; r < rows; ++r) rev_cumsum_row(a.row_ptr(r), out.row_ptr(r), cols);
  }
}

namespace {

// One output row of C = A * B.
void matmul_nn_row(const Mat& a, const Mat& b, Mat& out, std::size_t i, bool accumulate) {
  const std::size_t inner = a.cols(), cols = b.cols();
  double* po = out.row_ptr(i);
  if (!accumulate) std::memset(po, 0, cols * sizeof(double));
  const double* pa = a.row_ptr(i);
  for (std::size_t k = 0; k < inner; ++k) {
    const double aik = pa[k];
    const double* pb = b.row_ptr(k);
    for (std::size_t j = 0; j < cols; ++j) po[j] += aik * pb[j];
  }
}

// One output row of C = A * B^T.
void matmul_nt_row(const Mat& a, const Mat& b, Mat& out, std::size_t i, bool accumulate) {
  const std::size_t inner = a.cols(), cols = b.rows();
  double* po = out.row_ptr(i);
  const double* pa = a.row_ptr(i);
  for (std::size_t j = 0; j < cols; ++j) {
    const double* pb = b.row_ptr(j);
    double acc = 0.0;
    for (std::size_t k = 0; k < inner; ++k) acc += pa[k] * pb[k];
    po[j] = accumulate ? po[j] + acc : acc;
  }
}

// One output row of C = A^T * B.
void matmul_tn_row(const Mat& a, const Mat& b, Mat& out, std::size_t i, bool accumulate) {
  const std::size_t inner = a.rows(), cols = b.cols();
  double* po = out.row_ptr(i);
  if (!accumulate) std::memset(po, 0, cols * sizeof(double));
  for (std::size_t k = 0; k < inner; ++k) {
    const double aki = a.at(k, i);
    const double* pb = b.row_ptr(k);
    for (std::size_t j = 0; j < cols; ++j) po[j] += aki * pb[j];
  }
}

void matmul_impl(const Mat& a, bool ta, const Mat& b, bool tb, Mat& out, bool accumulate) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t ka = ta ? a.rows() : a.cols();
  const std::size_t kb = tb ? b.cols() : b.rows();
  const std::size_t n = tb ? b.rows() : b.cols();
  if (ka != kb) {
    throw NumericError("matmul: incompatible shapes " + a.shape_str() + (ta ? "^T" : "") +
                       " vs " + b.shape_str() + (tb ? "^T" : ""));
  }
  if (out.rows() != m || out.cols() != n) {
    throw NumericError("matmul: output shape " + out.shape_str() + " does not match");
  }
  if (ta && tb) throw NumericError("matmul: double transpose unsupported");
  auto row_core = [&](std::size_t i) {
    if (!ta && !tb) {
      matmul_nn_row(a, b, out, i, accumulate);
    } else if (!ta && tb) {
      matmul_nt_row(a, b, out, i, accumulate);
    } else {
      matmul_tn_row(a, b, out, i, accumulate);
    }
  };
  if (use_parallel(m * n * ka / 8 + m * n) && m > 1) {
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(m); ++i) row_core(i);
  } else {
    for (std::size_t i = 0; i < m; ++i) row_core(i);
  }
}

}  // namespace

void matmul(const Mat& a, bool ta, const Mat& b, bool tb, Mat& out) {
  matmul_impl(a, ta, b, tb, out, false);
}

void matmul_acc(const Mat& a, bool ta, const Mat& b, bool tb, Mat& out) {
  matmul_impl(a, ta, b, tb, out, true);
}

void concat_cols(const Mat& a, const Mat& b, Mat& out) {
  if (a.rows() != b.rows()) {
    throw NumericError("concatenate: row mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::memcpy(out.row_ptr(r), a.row_ptr(r), a.cols() * sizeof(double));
    std::memcpy(out.row_ptr(r) + a.cols(), b.row_ptr(r), b.cols() * sizeof(double));
  }
}

void slice_cols(const Mat& a, std::size_t begin, std::size_t end, Mat& out) {
  if (begin >= end || end > a.cols()) {
    throw NumericError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                       ") out of bounds for " + a.shape_str());
  }
  const std::size_t width = end - begin;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::memcpy(out.row_ptr(r), a.row_ptr(r) + begin, width * sizeof(double));
  }
}

void add_into_cols(Mat& dst, std::size_t begin, const Mat& src) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    double* pd = dst.row_ptr(r) + begin;
    const double* ps = src.row_ptr(r);
    for (std::size_t j = 0; j < src.cols(); ++j) pd[j] += ps[j];
  }
}

}  // namespace splineflow::kernels
