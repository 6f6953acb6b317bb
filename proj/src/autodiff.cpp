#include "splineflow/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "splineflow/errors.hpp"
#include "splineflow/kernels.hpp"

namespace splineflow::ad {

namespace ker = splineflow::kernels;

// ---------------------------------------------------------------------------
// Value

const Mat& Value::val() const { return tape->node(id).value; }
std::size_t Value::rows() const { return val().rows(); }
std::size_t Value::cols() const { return val().cols(); }

double Value::item() const {
  const Mat& m = val();
  if (m.size() != 1) {
    throw NumericError("item: expected scalar, got " + m.shape_str());
  }
  return m[0];
}

// ---------------------------------------------------------------------------
// Tape

Value Tape::constant(Mat m) { return emplace("constant", std::move(m), false, nullptr); }

Value Tape::constant_scalar(double v) { return constant(Mat::scalar(v)); }

Value Tape::param(const std::string& name) {
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return Value{this, it->second};
  if (params_ == nullptr) {
    throw NumericError("param: tape was built without a parameter store");
  }
  const Mat& src = params_->get(name);
  Mat copy = alloc(src.rows(), src.cols());
  std::memcpy(copy.data(), src.data(), src.size() * sizeof(double));
  Value v = emplace("param", std::move(copy), true, nullptr);
  param_nodes_[name] = v.id;
  return v;
}

const Mat& Tape::value(Value v) const { return nodes_[v.id].value; }

const Mat& Tape::grad(Value v) const {
  static const Mat empty;
  const Node& n = nodes_[v.id];
  return n.grad.size() ? n.grad : empty;
}

Value Tape::emplace(const char* kind, Mat value, bool requires_grad,
                    std::function<void(Tape&, std::size_t)> backward_fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.kind = kind;
  if (requires_grad) n.backward = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return Value{this, nodes_.size() - 1};
}

Mat Tape::alloc(std::size_t rows, std::size_t cols) {
  auto& bucket = pool_[rows * cols];
  if (!bucket.empty()) {
    std::vector<double> storage = std::move(bucket.back());
    bucket.pop_back();
    return Mat(rows, cols, std::move(storage));
  }
  return Mat(rows, cols);
}

Mat Tape::alloc_zero(std::size_t rows, std::size_t cols) {
  Mat m = alloc(rows, cols);
  std::memset(m.data(), 0, m.size() * sizeof(double));
  return m;
}

void Tape::recycle(Mat&& m) {
  if (m.size() == 0) return;
  pool_[m.size()].push_back(m.take_storage());
}

void Tape::reset() {
  for (Node& n : nodes_) {
    recycle(std::move(n.value));
    recycle(std::move(n.grad));
  }
  nodes_.clear();
  param_nodes_.clear();
}

Mat& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = alloc_zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Mat& contribution) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  Mat& g = grad_buffer(id);
  if (contribution.same_shape(g)) {
    ker::ew_binary(ker::BinaryOp::add, g, contribution, g);
    return;
  }
  std::size_t r = 0, c = 0;
  ker::broadcast_shape(g, contribution, r, c, "accumulate");
  if (r == g.rows() && c == g.cols()) {
    // contribution is broadcast up to the node shape
    ker::ew_binary(ker::BinaryOp::add, g, contribution, g);
  } else if (r == contribution.rows() && c == contribution.cols()) {
    // node was broadcast in the forward pass; sum the extra axes back down
    ker::reduce_add_to(contribution, g);
  } else {
    throw NumericError("accumulate: cannot match " + contribution.shape_str() + " onto " +
                       g.shape_str());
  }
}

void Tape::backward(Value loss) {
  if (loss.tape != this) throw NumericError("backward: value belongs to another tape");
  Node& ln = nodes_[loss.id];
  if (ln.value.size() != 1) {
    throw NumericError("backward: loss must be scalar, got " + ln.value.shape_str());
  }
  for (Node& n : nodes_) {
    if (n.grad.size()) std::memset(n.grad.data(), 0, n.grad.size() * sizeof(double));
  }
  if (!ln.requires_grad) return;  // loss does not depend on any parameter
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, id);
  }
}

const Mat* Tape::param_grad(const std::string& name) const {
  auto it = param_nodes_.find(name);
  if (it == param_nodes_.end()) return nullptr;
  const Node& n = nodes_[it->second];
  return n.grad.size() ? &n.grad : nullptr;
}

// ---------------------------------------------------------------------------
// op helpers

namespace {

bool needs_grad(Value v) { return v.tape->node(v.id).requires_grad; }

Tape& same_tape(Value a, Value b, const char* kind) {
  if (a.tape != b.tape) {
    throw NumericError(std::string(kind) + ": values belong to different tapes");
  }
  return *a.tape;
}

// Read-only broadcast view used by the selection backward rules.
struct View {
  const Mat& m;
  std::size_t rstride, cstride;
  explicit View(const Mat& mm)
      : m(mm), rstride(mm.rows() == 1 ? 0 : 1), cstride(mm.cols() == 1 ? 0 : 1) {}
  double at(std::size_t r, std::size_t c) const {
    return m.row_ptr(r * rstride)[c * cstride];
  }
};

void check_positive(const Mat& m, const char* kind) {
  const std::size_t n = m.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!(m[i] > 0.0)) {
      throw NumericError(std::string(kind) + ": non-positive input " + std::to_string(m[i]) +
                         " at flat index " + std::to_string(i) + " of " + m.shape_str());
    }
  }
}

void check_nonzero(const Mat& m, const char* kind) {
  const std::size_t n = m.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (m[i] == 0.0) {
      throw NumericError(std::string(kind) + ": zero divisor at flat index " +
                         std::to_string(i) + " of " + m.shape_str());
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise binary

Value add(Value a, Value b) {
  Tape& t = same_tape(a, b, "add");
  std::size_t r = 0, c = 0;
  ker::broadcast_shape(a.val(), b.val(), r, c, "add");
  Mat out = t.alloc(r, c);
  ker::ew_binary(ker::BinaryOp::add, a.val(), b.val(), out);
  const std::size_t ia = a.id, ib = b.id;
  return t.emplace("add", std::move(out), needs_grad(a) || needs_grad(b),
                   [ia, ib](Tape& tp, std::size_t self) {
                     const Mat& g = tp.node(self).grad;
                     tp.accumulate(ia, g);
                     tp.accumulate(ib, g);
                   });
}

Value sub(Value a, Value b) {
  Tape& t = same_tape(a, b, "subtract");
  std::size_t r = 0, c = 0;
  ker::broadcast_shape(a.val(), b.val(), r, c, "subtract");
  Mat out = t.alloc(r, c);
  ker::ew_binary(ker::BinaryOp::sub, a.val(), b.val(), out);
  const std::size_t ia = a.id, ib = b.id;
  return t.emplace("subtract", std::move(out), needs_grad(a) || needs_grad(b),
                   [ia, ib](Tape& tp, std::size_t self) {
                     const Mat& g = tp.node(self).grad;
                     tp.accumulate(ia, g);
                     if (tp.node(ib).requires_grad) {
                       Mat neg = tp.alloc(g.rows(), g.cols());
                       ker::ew_unary(ker::UnaryOp::neg, g, neg);
                       tp.accumulate(ib, neg);
                       tp.recycle(std::move(neg));
                     }
                   });
}

Value mul(Value a, Value b) {
  Tape& t = same_tape(a, b, "multiply");
  std::size_t r = 0, c = 0;
  ker::broadcast_shape(a.val(), b.val(), r, c, "multiply");
  Mat out = t.alloc(r, c);
  ker::ew_binary(ker::BinaryOp::mul, a.val(), b.val(), out);
  const std::size_t ia = a.id, ib = b.id;
  return t.emplace("multiply", std::move(out), needs_grad(a) || needs_grad(b),
                   [ia, ib](Tape& tp, std::size_t self) {
                     const Mat& g = tp.node(self).grad;
                     if (tp.node(ia).requires_grad) {
                       Mat da = tp.alloc(g.rows(), g.cols());
                       ker::ew_binary(ker::BinaryOp::mul, g, tp.node(ib).value, da);
                       tp.accumulate(ia, da);
                       tp.recycle(std::move(da));
                     }
                     if (tp.node(ib).requires_grad) {
                       Mat db = tp.alloc(g.rows(), g.cols());
                       ker::ew_binary(ker::BinaryOp::mul, g, tp.node(ia).value, db);
                       tp.accumulate(ib, db);
                       tp.recycle(std::move(db));
                     }
                   });
}

Value div(Value a, Value b) {
  Tape& t = same_tape(a, b, "divide");
  check_nonzero(b.val(), "divide");
  std::size_t r = 0, c = 0;
  ker::broadcast_shape(a.val(), b.val(), r, c, "divide");
  Mat out = t.alloc(r, c);
  ker::ew_binary(ker::BinaryOp::div, a.val(), b.val(), out);
  const std::size_t ia = a.id, ib = b.id;
  return t.emplace("divide", std::move(out), needs_grad(a) || needs_grad(b),
                   [ia, ib](Tape& tp, std::size_t self) {
                     const Mat& g = tp.node(self).grad;
                     const Mat& bv = tp.node(ib).value;
                     Mat gb = tp.alloc(g.rows(), g.cols());
                     ker::ew_binary(ker::BinaryOp::div, g, bv, gb);  // g / b
                     tp.accumulate(ia, gb);
                     if (tp.node(ib).requires_grad) {
                       // d/db (a/b) = -a/b^2 = -out/b
                       Mat db = tp.alloc(g.rows(), g.cols());
                       ker::ew_binary(ker::BinaryOp::mul, gb, tp.node(self).value, db);
                       ker::ew_unary(ker::UnaryOp::neg, db, db);
                       tp.accumulate(ib, db);
                       tp.recycle(std::move(db));
                     }
                     tp.recycle(std::move(gb));
                   });
}

Value minimum(Value a, Value b) {
  Tape& t = same_tape(a, b, "elementwise-min");
  std::size_t r = 0, c = 0;
  ker::broadcast_shape(a.val(), b.val(), r, c, "elementwise-min");
  Mat out = t.alloc(r, c);
  ker::ew_binary(ker::BinaryOp::min, a.val(), b.val(), out);
  const std::size_t ia = a.id, ib = b.id;
  return t.emplace("elementwise-min", std::move(out), needs_grad(a) || needs_grad(b),
                   [ia, ib](Tape& tp, std::size_t self) {
                     // Subgradient: selected operand gets the gradient; ties go
                     // to the first operand, matching min_scalar.
                     const Mat& g = tp.node(self).grad;
                     const View va(tp.node(ia).value);
                     const View vb(tp.node(ib).value);
                     const std::size_t rows = g.rows(), cols = g.cols();
                     Mat ca = tp.alloc_zero(rows, cols);
                     Mat cb = tp.alloc_zero(rows, cols);
                     for (std::size_t rr = 0; rr < rows; ++rr) {
                       for (std::size_t cc = 0; cc < cols; ++cc) {
                         if (vb.at(rr, cc) < va.at(rr, cc)) {
                           cb.at(rr, cc) = g.at(rr, cc);
                         } else {
                           ca.at(rr, cc) = g.at(rr, cc);
                         }
                       }
                     }
                     tp.accumulate(ia, ca);
                     tp.accumulate(ib, cb);
                     tp.recycle(std::move(ca));
                     tp.recycle(std::move(cb));
                   });
}

Value where(Value mask, Value a, Value b) {
  Tape& t = same_tape(mask, a, "where-select");
  same_tape(a, b, "where-select");
  std::size_t r = 0, c = 0;
  ker::broadcast_shape(mask.val(), a.val(), r, c, "where-select");
  Mat pair(r, c);  // shape carrier only
  std::size_t r2 = 0, c2 = 0;
  ker::broadcast_shape(pair, b.val(), r2, c2, "where-select");
  Mat out = t.alloc(r2, c2);
  ker::where_select(mask.val(), a.val(), b.val(), out);
  const std::size_t im = mask.id, ia = a.id, ib = b.id;
  return t.emplace("where-select", std::move(out), needs_grad(a) || needs_grad(b),
                   [im, ia, ib](Tape& tp, std::size_t self) {
                     const Mat& g = tp.node(self).grad;
                     const Mat& mv = tp.node(im).value;
                     const Mat zero = Mat::scalar(0.0);
                     if (tp.node(ia).requires_grad) {
                       Mat ca = tp.alloc(g.rows(), g.cols());
                       ker::where_select(mv, g, zero, ca);
                       tp.accumulate(ia, ca);
                       tp.recycle(std::move(ca));
                     }
                     if (tp.node(ib).requires_grad) {
                       Mat cb = tp.alloc(g.rows(), g.cols());
                       ker::where_select(mv, zero, g, cb);
                       tp.accumulate(ib, cb);
                       tp.recycle(std::move(cb));
                     }
                   });
}

// ---------------------------------------------------------------------------
// elementwise unary

Value negate(Value a) {
  Tape& t = *a.tape;
  Mat out = t.alloc(a.rows(), a.cols());
  ker::ew_unary(ker::UnaryOp::neg, a.val(), out);
  const std::size_t ia = a.id;
  return t.emplace("negate", std::move(out), needs_grad(a),
                   [ia](Tape& tp, std::size_t self) {
                     const Mat& g = tp.node(self).grad;
                     Mat neg = tp.alloc(g.rows(), g.cols());
                     ker::ew_unary(ker::UnaryOp::neg, g, neg);
                     tp.accumulate(ia, neg);
                     tp.recycle(std::move(neg));
                   });
}

Value exp(Value a) {
  Tape& t = *a.tape;
  Mat out = t.alloc(a.rows(), a.cols());
  ker::ew_unary(ker::UnaryOp::exp, a.val(), out);
  const std::size_t ia = a.id;
  return t.emplace("exp", std::move(out), needs_grad(a),
                   [ia](Tape& tp, std::size_t self) {
                     const Mat& g = tp.node(self).grad;
                     Mat d = tp.alloc(g.rows(), g.cols());
                     ker::ew_binary(ker::BinaryOp::mul, g, tp.node(self).value, d);
                     tp.accumulate(ia, d);
                     tp.recycle(std::move(d));
                   });
}

Value log(Value a) {
  Tape& t = *a.tape;
  check_positive(a.val(), "log");
  Mat out = t.alloc(a.rows(), a.cols());
  ker::ew_unary(ker::UnaryOp::log, a.val(), out);
  const std::size_t ia = a.id;
  return t.emplace("log", std::move(out), needs_grad(a),
                   [ia](Tape& tp, std::size_t self) {
                     const Mat& g = tp.node(self).grad;
                     Mat d = tp.alloc(g.rows(), g.cols());
                     ker::ew_binary(ker::BinaryOp::div, g, tp.node(ia).value, d);
                     tp.accumulate(ia, d);
                     tp.recycle(std::move(d));
                   });
}

Value sigmoid(Value a) {
  Tape& t = *a.tape;
  Mat out = t.alloc(a.rows(), a.cols());
  ker::ew_unary(ker::UnaryOp::sigmoid, a.val(), out);
  const std::size_t ia = a.id;
  return t.emplace("sigmoid", std::move(out), needs_grad(a),
                   [ia](Tape& tp, std::size_t self) {
                     // ds = g * s * (1 - s)
                     const Mat& g = tp.node(self).grad;
                     const Mat& s = tp.node(self).value;
                     const Mat one = Mat::scalar(1.0);
                     Mat d = tp.alloc(g.rows(), g.cols());
                     ker::ew_binary(ker::BinaryOp::sub, one, s, d);
                     ker::ew_binary(ker::BinaryOp::mul, d, s, d);
                     ker::ew_binary(ker::BinaryOp::mul, d, g, d);
                     tp.accumulate(ia, d);
                     tp.recycle(std::move(d));
                   });
}

Value relu(Value a) {
  Tape& t = *a.tape;
  Mat out = t.alloc(a.rows(), a.cols());
  ker::ew_unary(ker::UnaryOp::relu, a.val(), out);
  const std::size_t ia = a.id;
  return t.emplace("relu", std::move(out), needs_grad(a),
                   [ia](Tape& tp, std::size_t self) {
                     // relu(x) is nonzero exactly where x > 0, so the output
                     // doubles as the selection mask.
                     const Mat& g = tp.node(self).grad;
                     const Mat zero = Mat::scalar(0.0);
                     Mat d = tp.alloc(g.rows(), g.cols());
                     ker::where_select(tp.node(self).value, g, zero, d);
                     tp.accumulate(ia, d);
                     tp.recycle(std::move(d));
                   });
}

Value pow(Value a, double exponent) {
  Tape& t = *a.tape;
  Mat out = t.alloc(a.rows(), a.cols());
  ker::pow_elements(a.val(), exponent, out);
  const std::size_t ia = a.id;
  return t.emplace("power", std::move(out), needs_grad(a),
                   [ia, exponent](Tape& tp, std::size_t self) {
                     // d = g * e * a^(e-1)
                     const Mat& g = tp.node(self).grad;
                     const Mat& av = tp.node(ia).value;
                     Mat d = tp.alloc(g.rows(), g.cols());
                     ker::pow_elements(av, exponent - 1.0, d);
                     ker::ew_binary(ker::BinaryOp::mul, d, g, d);
                     const Mat e = Mat::scalar(exponent);
                     ker::ew_binary(ker::BinaryOp::mul, d, e, d);
                     tp.accumulate(ia, d);
                     tp.recycle(std::move(d));
                   });
}

// ---------------------------------------------------------------------------
// structured

Value matmul(Value a, Value b) {
  Tape& t = same_tape(a, b, "matmul");
  Mat out = t.alloc(a.rows(), b.cols());
  ker::matmul(a.val(), false, b.val(), false, out);
  const std::size_t ia = a.id, ib = b.id;
  return t.emplace("matmul", std::move(out), needs_grad(a) || needs_grad(b),
                   [ia, ib](Tape& tp, std::size_t self) {
                     const Mat& g = tp.node(self).grad;
                     if (tp.node(ia).requires_grad) {
                       ker::matmul_acc(g, false, tp.node(ib).value, true, tp.grad_buffer(ia));
                     }
                     if (tp.node(ib).requires_grad) {
                       ker::matmul_acc(tp.node(ia).value, true, g, false, tp.grad_buffer(ib));
                     }
                   });
}

Value matmul_nt(Value a, Value b) {
  Tape& t = same_tape(a, b, "matmul");
  Mat out = t.alloc(a.rows(), b.rows());
  ker::matmul(a.val(), false, b.val(), true, out);
  const std::size_t ia = a.id, ib = b.id;
  return t.emplace("matmul", std::move(out), needs_grad(a) || needs_grad(b),
                   [ia, ib](Tape& tp, std::size_t self) {
                     const Mat& g = tp.node(self).grad;
                     if (tp.node(ia).requires_grad) {
                       ker::matmul_acc(g, false, tp.node(ib).value, false, tp.grad_buffer(ia));
                     }
                     if (tp.node(ib).requires_grad) {
                       ker::matmul_acc(g, true, tp.node(ia).value, false, tp.grad_buffer(ib));
                     }
                   });
}

Value softmax_rows(Value a) {
  Tape& t = *a.tape;
  Mat out = t.alloc(a.rows(), a.cols());
  ker::softmax_rows(a.val(), out);
  const std::size_t ia = a.id;
  return t.emplace("softmax", std::move(out), needs_grad(a),
                   [ia](Tape& tp, std::size_t self) {
                     // dx = p * (g - rowsum(g * p))
                     const Mat& g = tp.node(self).grad;
                     const Mat& p = tp.node(self).value;
                     Mat gp = tp.alloc(g.rows(), g.cols());
                     ker::ew_binary(ker::BinaryOp::mul, g, p, gp);
                     Mat rs = tp.alloc(g.rows(), 1);
                     ker::row_sum(gp, rs);
                     ker::ew_binary(ker::BinaryOp::sub, g, rs, gp);
                     ker::ew_binary(ker::BinaryOp::mul, gp, p, gp);
                     tp.accumulate(ia, gp);
                     tp.recycle(std::move(gp));
                     tp.recycle(std::move(rs));
                   });
}

Value cumsum_rows(Value a) {
  Tape& t = *a.tape;
  Mat out = t.alloc(a.rows(), a.cols());
  ker::cumsum_rows(a.val(), out);
  const std::size_t ia = a.id;
  return t.emplace("cumulative-sum", std::move(out), needs_grad(a),
                   [ia](Tape& tp, std::size_t self) {
                     const Mat& g = tp.node(self).grad;
                     Mat d = tp.alloc(g.rows(), g.cols());
                     ker::rev_cumsum_rows(g, d);
                     tp.accumulate(ia, d);
                     tp.recycle(std::move(d));
                   });
}

Value concat_cols(Value a, Value b) {
  Tape& t = same_tape(a, b, "concatenate");
  Mat out = t.alloc(a.rows(), a.cols() + b.cols());
  ker::concat_cols(a.val(), b.val(), out);
  const std::size_t ia = a.id, ib = b.id, ca = a.cols(), cb = b.cols();
  return t.emplace("concatenate", std::move(out), needs_grad(a) || needs_grad(b),
                   [ia, ib, ca, cb](Tape& tp, std::size_t self) {
                     const Mat& g = tp.node(self).grad;
                     if (tp.node(ia).requires_grad) {
                       Mat ga = tp.alloc(g.rows(), ca);
                       ker::slice_cols(g, 0, ca, ga);
                       tp.accumulate(ia, ga);
                       tp.recycle(std::move(ga));
                     }
                     if (tp.node(ib).requires_grad) {
                       Mat gb = tp.alloc(g.rows(), cb);
                       ker::slice_cols(g, ca, ca + cb, gb);
                       tp.accumulate(ib, gb);
                       tp.recycle(std::move(gb));
                     }
                   });
}

Value slice_cols(Value a, std::size_t begin, std::size_t end) {
  Tape& t = *a.tape;
  if (begin >= end || end > a.cols()) {
    throw NumericError("slice: range [" + std::to_string(begin) + ", " +
                       std::to_string(end) + ") out of bounds for " + a.val().shape_str());
  }
  Mat out = t.alloc(a.rows(), end - begin);
  ker::slice_cols(a.val(), begin, end, out);
  const std::size_t ia = a.id;
  return t.emplace("slice", std::move(out), needs_grad(a),
                   [ia, begin](Tape& tp, std::size_t self) {
                     const Mat& g = tp.node(self).grad;
                     if (!tp.node(ia).requires_grad) return;
                     Mat& dst = tp.grad_buffer(ia);
                     ker::add_into_cols(dst, begin, g);
                   });
}

// ---------------------------------------------------------------------------
// reductions

Value sum_all(Value a) {
  Tape& t = *a.tape;
  Mat out = Mat::scalar(ker::sum_all(a.val()));
  const std::size_t ia = a.id;
  return t.emplace("sum", std::move(out), needs_grad(a),
                   [ia](Tape& tp, std::size_t self) {
                     tp.accumulate(ia, tp.node(self).grad);  // broadcast up
                   });
}

Value mean_all(Value a) {
  Tape& t = *a.tape;
  const double n = static_cast<double>(a.val().size());
  Mat out = Mat::scalar(ker::sum_all(a.val()) / n);
  const std::size_t ia = a.id;
  return t.emplace("mean", std::move(out), needs_grad(a),
                   [ia, n](Tape& tp, std::size_t self) {
                     const Mat scaled = Mat::scalar(tp.node(self).grad[0] / n);
                     tp.accumulate(ia, scaled);
                   });
}

Value row_sum(Value a) {
  Tape& t = *a.tape;
  Mat out = t.alloc(a.rows(), 1);
  ker::row_sum(a.val(), out);
  const std::size_t ia = a.id;
  return t.emplace("sum", std::move(out), needs_grad(a),
                   [ia](Tape& tp, std::size_t self) {
                     tp.accumulate(ia, tp.node(self).grad);  // [N,1] broadcast to [N,K]
                   });
}

// ---------------------------------------------------------------------------
// composites

Value softplus(Value a) {
  // softplus(x) = relu(x) + log1p(exp(-|x|)); |x| = relu(x) + relu(-x).
  // Stable for large |x| and built entirely from catalogue ops.
  Value rx = relu(a);
  Value ax = add(rx, relu(negate(a)));
  return add(rx, log(add(a.tape->constant_scalar(1.0), exp(negate(ax)))));
}

// ---------------------------------------------------------------------------
// sugar

Value operator+(Value a, Value b) { return add(a, b); }
Value operator-(Value a, Value b) { return sub(a, b); }
Value operator*(Value a, Value b) { return mul(a, b); }
Value operator/(Value a, Value b) { return div(a, b); }
Value operator-(Value a) { return negate(a); }
Value operator+(Value a, double c) { return add(a, a.tape->constant_scalar(c)); }
Value operator+(double c, Value a) { return add(a.tape->constant_scalar(c), a); }
Value operator-(Value a, double c) { return sub(a, a.tape->constant_scalar(c)); }
Value operator-(double c, Value a) { return sub(a.tape->constant_scalar(c), a); }
Value operator*(Value a, double c) { return mul(a, a.tape->constant_scalar(c)); }
Value operator*(double c, Value a) { return mul(a.tape->constant_scalar(c), a); }
Value operator/(Value a, double c) { return div(a, a.tape->constant_scalar(c)); }
Value operator/(double c, Value a) { return div(a.tape->constant_scalar(c), a); }

// ---------------------------------------------------------------------------
// grad_check

double grad_check(ParamStore& store, const std::function<Value(Tape&)>& build_loss,
                  double epsilon) {
  if (!(epsilon > 0.0)) throw NumericError("grad_check: epsilon must be positive");
  Tape tape(&store);
  Value loss = build_loss(tape);
  const double base = loss.item();
  if (!std::isfinite(base)) {
    throw NumericError("grad_check: non-finite loss " + std::to_string(base));
  }
  tape.backward(loss);
  std::vector<Mat> analytic(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Mat* g = tape.param_grad(store.name_at(i));
    const Mat& v = store.value_at(i);
    analytic[i] = g ? *g : Mat(v.rows(), v.cols());
  }

  auto eval = [&]() {
    Tape t(&store);
    double v = build_loss(t).item();
    if (!std::isfinite(v)) {
      throw NumericError("grad_check: non-finite loss under perturbation");
    }
    return v;
  };

  double max_rel = 0.0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    Mat& p = store.value_at(i);
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double orig = p[j];
      p[j] = orig + epsilon;
      const double fp = eval();
      p[j] = orig - epsilon;
      const double fm = eval();
      p[j] = orig;
      const double fd = (fp - fm) / (2.0 * epsilon);
      const double an = analytic[i][j];
      const double rel =
          std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace splineflow::ad
