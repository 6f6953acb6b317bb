#pragma once

#include <string>
#include <vector>

#include "splineflow/autodiff.hpp"
#include "splineflow/mat.hpp"
#include "splineflow/param_store.hpp"
#include "splineflow/rng.hpp"

namespace splineflow::conditioner {

// Fully-connected conditioner: input linear layer, two pre-activation
// residual blocks (block(u) = u + W2*relu(W1*relu(u)), no inner biases), and
// a linear output layer. The output layer is zero-initialized so a freshly
// built net emits all-zero raw spline parameters (identity splines); the
// remaining weights draw uniformly from +-1/sqrt(fan_in), biases start at
// zero.
class ResidualMLP {
 public:
  ResidualMLP(std::string prefix, int in_width, int hidden, int out_width);

  // Create and initialize this net's parameters in `store`. Draw order is
  // fixed, so a given rng state yields identical weights every time.
  void register_params(ParamStore& store, Rng& rng) const;

  ad::Value forward(ad::Tape& t, ad::Value context) const;
  // Same arithmetic without a tape; bit-identical to the value of forward().
  Mat forward_plain(const ParamStore& store, const Mat& context) const;

  int in_width() const { return in_; }
  int hidden() const { return hidden_; }
  int out_width() const { return out_; }
  std::vector<std::string> param_names() const;

 private:
  std::string name(const char* leaf) const { return prefix_ + "." + leaf; }

  std::string prefix_;
  int in_;
  int hidden_;
  int out_;
};

}  // namespace splineflow::conditioner
