#include "splineflow/transforms.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "splineflow/errors.hpp"
#include "splineflow/kernels.hpp"
#include "splineflow/spline_ops.hpp"

namespace splineflow::transforms {

namespace {

void check_finite_mat(const Mat& m, const std::string& what) {
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!std::isfinite(m.data()[i])) {
      throw NumericError(what + " produced non-finite values");
    }
  }
}

void check_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw NumericError(std::string(what) + ": batch has " + std::to_string(got) +
                       " columns, layer expects " + std::to_string(want));
  }
}

}  // namespace

// ---------------------------------------------------------------- coupling

CouplingLayer::CouplingLayer(std::string prefix, int D, SplineKind spline, int K,
                             int hidden, bool flip, double min_bin)
    : prefix_(std::move(prefix)),
      D_(D),
      spline_(spline),
      K_(K),
      flip_(flip),
      min_bin_(min_bin) {
  if (D_ < 1) throw NumericError("CouplingLayer: D must be >= 1");
  if (K_ < 1) throw NumericError("CouplingLayer: K must be >= 1");
  if (!(min_bin_ >= 0.0) || min_bin_ * K_ >= 1.0) {
    throw NumericError("CouplingLayer: min_bin must lie in [0, 1/K)");
  }

  const std::size_t c = static_cast<std::size_t>((D_ + 1) / 2);  // identity size
  if (D_ == 1) {
    id_lo_ = 0;
    id_hi_ = 1;
    tr_lo_ = tr_hi_ = 1;
  } else if (!flip_) {
    id_lo_ = 0;
    id_hi_ = c;
    tr_lo_ = c;
    tr_hi_ = static_cast<std::size_t>(D_);
  } else {
    id_lo_ = c;
    id_hi_ = static_cast<std::size_t>(D_);
    tr_lo_ = 0;
    tr_hi_ = c;
  }
  const std::size_t n_tr = tr_hi_ - tr_lo_;
  if (n_tr > 0) {
    cond_.emplace(prefix_ + ".cond", static_cast<int>(id_hi_ - id_lo_), hidden,
                  static_cast<int>(n_tr) * params_per_dim());
  }
}

int CouplingLayer::params_per_dim() const {
  return spline_ == SplineKind::cubic ? 2 * K_ + 2 : 2 * K_ + 1;
}

void CouplingLayer::register_params(ParamStore& store, Rng& rng) {
  const std::size_t n_id = id_hi_ - id_lo_;
  store.create(prefix_ + ".elem",
               Mat(1, n_id * static_cast<std::size_t>(params_per_dim()), 0.0));
  if (cond_) cond_->register_params(store, rng);
}

std::vector<std::string> CouplingLayer::param_names() const {
  std::vector<std::string> names{prefix_ + ".elem"};
  if (cond_) {
    for (auto& n : cond_->param_names()) names.push_back(n);
  }
  return names;
}

TapeResult CouplingLayer::forward_tape(ad::Tape& t, ad::Value x) const {
  check_dim(x.cols(), dim(), "coupling");
  auto spline_fwd = [&](ad::Value raw, ad::Value part) {
    return spline_ == SplineKind::cubic
               ? spline_ops::cubic_forward(t, raw, part, K_, min_bin_)
               : spline_ops::quadratic_forward(t, raw, part, K_, min_bin_);
  };

  ad::Value xid = D_ == 1 ? x : ad::slice_cols(x, id_lo_, id_hi_);
  auto id_res = spline_fwd(t.param(prefix_ + ".elem"), xid);
  if (!cond_) return {id_res.y, id_res.log_det};

  ad::Value xtr = ad::slice_cols(x, tr_lo_, tr_hi_);
  ad::Value raw_tr = cond_->forward(t, id_res.y);
  auto tr_res = spline_fwd(raw_tr, xtr);

  ad::Value y = flip_ ? ad::concat_cols(tr_res.y, id_res.y)
                      : ad::concat_cols(id_res.y, tr_res.y);
  return {y, ad::add(id_res.log_det, tr_res.log_det)};
}

PlainResult CouplingLayer::forward_plain(const ParamStore& store, const Mat& x) const {
  check_dim(x.cols(), dim(), "coupling");
  auto spline_fwd = [&](const Mat& raw, const Mat& part) {
    return spline_ == SplineKind::cubic
               ? spline_ops::cubic_apply_plain(raw, part, K_, min_bin_, false)
               : spline_ops::quadratic_apply_plain(raw, part, K_, min_bin_, false);
  };

  const std::size_t N = x.rows();
  Mat xid(N, id_hi_ - id_lo_, 0.0);
  kernels::slice_cols(x, id_lo_, id_hi_, xid);
  auto id_res = spline_fwd(store.get(prefix_ + ".elem"), xid);
  if (!cond_) return {std::move(id_res.y), std::move(id_res.log_det)};

  Mat xtr(N, tr_hi_ - tr_lo_, 0.0);
  kernels::slice_cols(x, tr_lo_, tr_hi_, xtr);
  Mat raw_tr = cond_->forward_plain(store, id_res.y);
  auto tr_res = spline_fwd(raw_tr, xtr);

  Mat y(N, dim(), 0.0);
  const Mat& first = flip_ ? tr_res.y : id_res.y;
  const Mat& second = flip_ ? id_res.y : tr_res.y;
  kernels::concat_cols(first, second, y);
  Mat ld(N, 1, 0.0);
  kernels::ew_binary(kernels::BinaryOp::add, id_res.log_det, tr_res.log_det, ld);
  return {std::move(y), std::move(ld)};
}

PlainResult CouplingLayer::inverse_plain(const ParamStore& store, const Mat& y,
                                         splines::InvertStats* stats) const {
  check_dim(y.cols(), dim(), "coupling");
  auto spline_inv = [&](const Mat& raw, const Mat& part) {
    return spline_ == SplineKind::cubic
               ? spline_ops::cubic_apply_plain(raw, part, K_, min_bin_, true, stats)
               : spline_ops::quadratic_apply_plain(raw, part, K_, min_bin_, true);
  };

  const std::size_t N = y.rows();
  Mat yid(N, id_hi_ - id_lo_, 0.0);
  kernels::slice_cols(y, id_lo_, id_hi_, yid);
  if (!cond_) {
    auto id_res = spline_inv(store.get(prefix_ + ".elem"), yid);
    return {std::move(id_res.y), std::move(id_res.log_det)};
  }

  // The conditioner reads the identity half of the input, which is exactly
  // what it saw in the forward direction (post-elementwise values).
  Mat ytr(N, tr_hi_ - tr_lo_, 0.0);
  kernels::slice_cols(y, tr_lo_, tr_hi_, ytr);
  Mat raw_tr = cond_->forward_plain(store, yid);
  auto tr_res = spline_inv(raw_tr, ytr);
  auto id_res = spline_inv(store.get(prefix_ + ".elem"), yid);

  Mat x(N, dim(), 0.0);
  const Mat& first = flip_ ? tr_res.y : id_res.y;
  const Mat& second = flip_ ? id_res.y : tr_res.y;
  kernels::concat_cols(first, second, x);
  Mat ld(N, 1, 0.0);
  kernels::ew_binary(kernels::BinaryOp::add, id_res.log_det, tr_res.log_det, ld);
  return {std::move(x), std::move(ld)};
}

// ---------------------------------------------------------------- LU linear

LULinear::LULinear(std::string prefix, int D) : prefix_(std::move(prefix)), D_(D) {
  if (D_ < 1) throw NumericError("LULinear: D must be >= 1");
  const std::size_t n = static_cast<std::size_t>(D_);
  mask_lower_ = Mat(n, n, 0.0);
  mask_upper_ = Mat(n, n, 0.0);
  eye_ = Mat(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    eye_.at(i, i) = 1.0;
    for (std::size_t j = 0; j < i; ++j) mask_lower_.at(i, j) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) mask_upper_.at(i, j) = 1.0;
  }
  perm_.resize(n);
  for (std::size_t i = 0; i < n; ++i) perm_[i] = static_cast<int>(i);
  rebuild_pmat();
}

void LULinear::rebuild_pmat() {
  const std::size_t n = static_cast<std::size_t>(D_);
  pmat_ = Mat(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) pmat_.at(i, static_cast<std::size_t>(perm_[i])) = 1.0;
}

void LULinear::set_permutation(std::vector<int> perm) {
  if (perm.size() != static_cast<std::size_t>(D_)) {
    throw NumericError("LULinear: permutation length mismatch");
  }
  std::vector<bool> seen(perm.size(), false);
  for (int p : perm) {
    if (p < 0 || p >= D_ || seen[static_cast<std::size_t>(p)]) {
      throw NumericError("LULinear: invalid permutation");
    }
    seen[static_cast<std::size_t>(p)] = true;
  }
  perm_ = std::move(perm);
  rebuild_pmat();
}

void LULinear::register_params(ParamStore& store, Rng& rng) {
  const std::size_t n = static_cast<std::size_t>(D_);
  // Fisher-Yates from the run rng; L = U = I so the layer starts as the
  // permutation alone.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(perm_[i - 1], perm_[j]);
  }
  rebuild_pmat();
  store.create(prefix_ + ".L", Mat(n, n, 0.0));
  store.create(prefix_ + ".U", Mat(n, n, 0.0));
  store.create(prefix_ + ".logdiag", Mat(1, n, 0.0));
}

std::vector<std::string> LULinear::param_names() const {
  return {prefix_ + ".L", prefix_ + ".U", prefix_ + ".logdiag"};
}

TapeResult LULinear::forward_tape(ad::Tape& t, ad::Value x) const {
  check_dim(x.cols(), dim(), "lu_linear");
  ad::Value eye = t.constant(eye_);
  ad::Value lfull = ad::add(eye, ad::mul(t.param(prefix_ + ".L"), t.constant(mask_lower_)));
  ad::Value diag = ad::mul(eye, ad::exp(t.param(prefix_ + ".logdiag")));
  ad::Value ufull = ad::add(ad::mul(t.param(prefix_ + ".U"), t.constant(mask_upper_)), diag);

  ad::Value h = ad::matmul_nt(x, ufull);
  h = ad::matmul_nt(h, lfull);
  ad::Value y = ad::matmul_nt(h, t.constant(pmat_));

  ad::Value ld_scalar = ad::sum_all(t.param(prefix_ + ".logdiag"));
  ad::Value ld = ad::add(t.constant(Mat(x.rows(), 1, 0.0)), ld_scalar);
  return {y, ld};
}

PlainResult LULinear::forward_plain(const ParamStore& store, const Mat& x) const {
  check_dim(x.cols(), dim(), "lu_linear");
  const std::size_t n = static_cast<std::size_t>(D_);
  const std::size_t N = x.rows();

  Mat lfull(n, n, 0.0), ufull(n, n, 0.0), expd(1, n, 0.0), diag(n, n, 0.0);
  kernels::ew_binary(kernels::BinaryOp::mul, store.get(prefix_ + ".L"), mask_lower_, lfull);
  kernels::ew_binary(kernels::BinaryOp::add, eye_, lfull, lfull);
  kernels::ew_unary(kernels::UnaryOp::exp, store.get(prefix_ + ".logdiag"), expd);
  kernels::ew_binary(kernels::BinaryOp::mul, eye_, expd, diag);
  kernels::ew_binary(kernels::BinaryOp::mul, store.get(prefix_ + ".U"), mask_upper_, ufull);
  kernels::ew_binary(kernels::BinaryOp::add, ufull, diag, ufull);

  Mat h(N, n, 0.0), h2(N, n, 0.0), y(N, n, 0.0);
  kernels::matmul(x, false, ufull, true, h);
  kernels::matmul(h, false, lfull, true, h2);
  kernels::matmul(h2, false, pmat_, true, y);

  const double ld_scalar = kernels::sum_all(store.get(prefix_ + ".logdiag"));
  Mat ld(N, 1, ld_scalar);
  return {std::move(y), std::move(ld)};
}

PlainResult LULinear::inverse_plain(const ParamStore& store, const Mat& y,
                                    splines::InvertStats*) const {
  check_dim(y.cols(), dim(), "lu_linear");
  const std::size_t n = static_cast<std::size_t>(D_);
  const std::size_t N = y.rows();
  const Mat& L = store.get(prefix_ + ".L");
  const Mat& U = store.get(prefix_ + ".U");
  const Mat& logdiag = store.get(prefix_ + ".logdiag");

  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = std::exp(logdiag.at(0, i));

  Mat x(N, n, 0.0);
  std::vector<double> z(n), a(n);
  for (std::size_t r = 0; r < N; ++r) {
    // undo P: z = P^T y scatters y_i back to slot perm[i]
    for (std::size_t i = 0; i < n; ++i) z[static_cast<std::size_t>(perm_[i])] = y.at(r, i);
    // forward substitution with unit diagonal: L a = z
    for (std::size_t i = 0; i < n; ++i) {
      double acc = z[i];
      for (std::size_t j = 0; j < i; ++j) acc -= L.at(i, j) * a[j];
      a[i] = acc;
    }
    // back substitution: U x = a
    for (std::size_t i = n; i-- > 0;) {
      double acc = a[i];
      for (std::size_t j = i + 1; j < n; ++j) acc -= U.at(i, j) * x.at(r, j);
      x.at(r, i) = acc / diag[i];
    }
  }

  const double ld_scalar = -kernels::sum_all(logdiag);
  Mat ld(N, 1, ld_scalar);
  return {std::move(x), std::move(ld)};
}

// ---------------------------------------------------------------- logit sandwich

LogitSandwich::LogitSandwich(int D, bool to_unit, double clip)
    : D_(D), to_unit_(to_unit), clip_(clip) {
  if (D_ < 1) throw NumericError("LogitSandwich: D must be >= 1");
  if (!(clip_ > 0.0) || clip_ >= 0.5) {
    throw NumericError("LogitSandwich: clip must lie in (0, 0.5)");
  }
}

namespace {

// y = sigmoid(x), per-row log-det = sum log sigma'(x) in the softplus form
// that stays finite for any x.
TapeResult sigmoid_tape(ad::Tape&, ad::Value x) {
  ad::Value y = ad::sigmoid(x);
  ad::Value ld = ad::row_sum(ad::sub(ad::negate(ad::softplus(ad::negate(x))), ad::softplus(x)));
  return {y, ld};
}

PlainResult sigmoid_plain(const Mat& x) {
  const std::size_t N = x.rows(), D = x.cols();
  PlainResult r{Mat(N, D, 0.0), Mat(N, 1, 0.0)};
  for (std::size_t n = 0; n < N; ++n) {
    double acc = 0.0;
    for (std::size_t j = 0; j < D; ++j) {
      const double v = x.at(n, j);
      r.batch.at(n, j) = kernels::sigmoid_scalar(v);
      acc += (-splines::softplus_scalar(-v)) - splines::softplus_scalar(v);
    }
    r.log_det.at(n, 0) = acc;
  }
  return r;
}

// y = logit(clamp(x)), per-row log-det = -sum [log xc + log(1-xc)].
TapeResult logit_tape(ad::Tape& t, ad::Value x, double clip) {
  ad::Value lo = t.constant_scalar(clip);
  ad::Value hi = t.constant_scalar(1.0 - clip);
  ad::Value xc = ad::minimum(ad::negate(ad::minimum(ad::negate(x), ad::negate(lo))), hi);
  ad::Value lx = ad::log(xc);
  ad::Value l1x = ad::log(ad::sub(t.constant_scalar(1.0), xc));
  ad::Value y = ad::sub(lx, l1x);
  ad::Value ld = ad::negate(ad::row_sum(ad::add(lx, l1x)));
  return {y, ld};
}

PlainResult logit_plain(const Mat& x, double clip) {
  const std::size_t N = x.rows(), D = x.cols();
  const double hi = 1.0 - clip;
  PlainResult r{Mat(N, D, 0.0), Mat(N, 1, 0.0)};
  for (std::size_t n = 0; n < N; ++n) {
    double acc = 0.0;
    for (std::size_t j = 0; j < D; ++j) {
      const double v = x.at(n, j);
      const double xc = kernels::min_scalar(-kernels::min_scalar(-v, -clip), hi);
      const double lx = std::log(xc);
      const double l1x = std::log(1.0 - xc);
      r.batch.at(n, j) = lx - l1x;
      acc += lx + l1x;
    }
    r.log_det.at(n, 0) = -acc;
  }
  return r;
}

}  // namespace

TapeResult LogitSandwich::forward_tape(ad::Tape& t, ad::Value x) const {
  check_dim(x.cols(), dim(), "logit_sandwich");
  return to_unit_ ? sigmoid_tape(t, x) : logit_tape(t, x, clip_);
}

PlainResult LogitSandwich::forward_plain(const ParamStore&, const Mat& x) const {
  check_dim(x.cols(), dim(), "logit_sandwich");
  return to_unit_ ? sigmoid_plain(x) : logit_plain(x, clip_);
}

PlainResult LogitSandwich::inverse_plain(const ParamStore&, const Mat& y,
                                         splines::InvertStats*) const {
  check_dim(y.cols(), dim(), "logit_sandwich");
  return to_unit_ ? logit_plain(y, clip_) : sigmoid_plain(y);
}

// ---------------------------------------------------------------- stack

void TransformStack::add(std::unique_ptr<Layer> layer) {
  layers_.push_back(std::move(layer));
}

void TransformStack::register_params(ParamStore& store, Rng& rng) {
  for (auto& l : layers_) l->register_params(store, rng);
}

std::vector<std::string> TransformStack::param_names() const {
  std::vector<std::string> names;
  for (const auto& l : layers_) {
    for (auto& n : l->param_names()) names.push_back(n);
  }
  return names;
}

TapeResult TransformStack::forward_tape(ad::Tape& t, ad::Value x) const {
  ad::Value ld = t.constant(Mat(x.rows(), 1, 0.0));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    TapeResult r = layers_[i]->forward_tape(t, x);
    check_finite_mat(t.value(r.batch), "stack layer " + std::to_string(i));
    check_finite_mat(t.value(r.log_det), "stack layer " + std::to_string(i));
    x = r.batch;
    ld = ad::add(ld, r.log_det);
  }
  return {x, ld};
}

PlainResult TransformStack::forward_plain(const ParamStore& store, const Mat& x) const {
  PlainResult cur{x, Mat(x.rows(), 1, 0.0)};
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    PlainResult r = layers_[i]->forward_plain(store, cur.batch);
    check_finite_mat(r.batch, "stack layer " + std::to_string(i));
    check_finite_mat(r.log_det, "stack layer " + std::to_string(i));
    cur.batch = std::move(r.batch);
    kernels::ew_binary(kernels::BinaryOp::add, cur.log_det, r.log_det, cur.log_det);
  }
  return cur;
}

PlainResult TransformStack::inverse_plain(const ParamStore& store, const Mat& y,
                                          splines::InvertStats* stats) const {
  PlainResult cur{y, Mat(y.rows(), 1, 0.0)};
  for (std::size_t i = layers_.size(); i-- > 0;) {
    PlainResult r = layers_[i]->inverse_plain(store, cur.batch, stats);
    check_finite_mat(r.batch, "stack layer " + std::to_string(i));
    check_finite_mat(r.log_det, "stack layer " + std::to_string(i));
    cur.batch = std::move(r.batch);
    kernels::ew_binary(kernels::BinaryOp::add, cur.log_det, r.log_det, cur.log_det);
  }
  return cur;
}

}  // namespace splineflow::transforms
