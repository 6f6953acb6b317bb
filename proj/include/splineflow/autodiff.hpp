#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "splineflow/mat.hpp"
#include "splineflow/param_store.hpp"

// Reverse-mode autodiff over dense matrices, define-by-run. A Tape is built
// fresh for each loss evaluation; backward() walks the node list in reverse.
// Tapes are single-threaded; distinct tapes over the same (read-only)
// ParamStore may run concurrently.

namespace splineflow::ad {

class Tape;

struct Value {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Mat& val() const;
  std::size_t rows() const;
  std::size_t cols() const;
  double item() const;  // value of a 1x1 node
};

class Tape {
 public:
  explicit Tape(const ParamStore* params = nullptr) : params_(params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that does not receive gradients (data batches, masks, literals).
  Value constant(Mat m);
  Value constant_scalar(double v);
  // Grad-tracked leaf bound to a store parameter; cached, so repeated calls
  // with the same name return the same node.
  Value param(const std::string& name);

  const Mat& value(Value v) const;
  const Mat& grad(Value v) const;

  // Seeds d(loss)/d(loss) = 1 and accumulates exact gradients into every
  // grad-tracked node. loss must be scalar.
  void backward(Value loss);

  // Gradient of the last backward() with respect to a store parameter;
  // nullptr when the parameter was never touched on this tape.
  const Mat* param_grad(const std::string& name) const;

  // Drop all nodes but keep allocation buffers for reuse.
  void reset();

  std::size_t num_nodes() const { return nodes_.size(); }
  const ParamStore* params() const { return params_; }

  // Pool-backed allocation (contents uninitialized).
  Mat alloc(std::size_t rows, std::size_t cols);
  Mat alloc_zero(std::size_t rows, std::size_t cols);
  void recycle(Mat&& m);

  // --- internal: used by the op implementations ---
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    const char* kind = "";
    std::function<void(Tape&, std::size_t)> backward;
  };
  Value emplace(const char* kind, Mat value, bool requires_grad,
                std::function<void(Tape&, std::size_t)> backward_fn);
  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  // Gradient slot of a node, zero-initialized on first access.
  Mat& grad_buffer(std::size_t id);
  // Accumulate `contribution` into node `id`'s gradient, reducing over
  // broadcast axes; no-op when the node does not require gradients.
  void accumulate(std::size_t id, const Mat& contribution);

 private:
  const ParamStore* params_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_nodes_;
  std::unordered_map<std::size_t, std::vector<std::vector<double>>> pool_;
};

// ---- op catalogue ----

Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
Value div(Value a, Value b);
Value matmul(Value a, Value b);
Value matmul_nt(Value a, Value b);  // a * b^T
Value negate(Value a);
Value exp(Value a);
Value log(Value a);
Value sigmoid(Value a);
Value relu(Value a);
Value softmax_rows(Value a);
Value cumsum_rows(Value a);
Value minimum(Value a, Value b);  // ties propagate the gradient to `a`
Value where(Value mask, Value a, Value b);
Value pow(Value a, double exponent);
Value concat_cols(Value a, Value b);
Value slice_cols(Value a, std::size_t begin, std::size_t end);
Value sum_all(Value a);
Value mean_all(Value a);
Value row_sum(Value a);  // sum over the last axis, [N,K] -> [N,1]

// ---- composites ----

// Numerically stable log(1 + e^x), built from catalogue ops.
Value softplus(Value a);

// ---- sugar ----

Value operator+(Value a, Value b);
Value operator-(Value a, Value b);
Value operator*(Value a, Value b);
Value operator/(Value a, Value b);
Value operator-(Value a);
Value operator+(Value a, double c);
Value operator+(double c, Value a);
Value operator-(Value a, double c);
Value operator-(double c, Value a);
Value operator*(Value a, double c);
Value operator*(double c, Value a);
Value operator/(Value a, double c);
Value operator/(double c, Value a);

// Max relative error between analytic gradients of build_loss and central
// finite differences at +-epsilon, over every element of every parameter.
double grad_check(ParamStore& store, const std::function<Value(Tape&)>& build_loss,
                  double epsilon);

}  // namespace splineflow::ad
