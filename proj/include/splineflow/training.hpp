#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "splineflow/flow.hpp"
#include "splineflow/mat.hpp"
#include "splineflow/param_store.hpp"

// Maximum-likelihood training: Adam on -mean log p(x) with a cosine
// learning-rate schedule, plus evaluation with two-standard-error bars.

namespace splineflow::training {

// eta0 * 0.5 * (1 + cos(pi * step / total)); steps past the end clamp to 0.
double cosine_lr(std::size_t step, std::size_t total, double eta0);

struct TrainConfig {
  std::size_t steps = 50000;
  std::size_t batch = 512;
  double lr = 5e-4;  // eta0 for the cosine schedule
  std::size_t log_every = 500;
  std::uint64_t seed = 0;  // minibatch stream, independent of the model seed
};

// Standard bias-corrected Adam. Moments live here, keyed by store index, so
// one instance must stay paired with one ParamStore.
class Adam {
 public:
  explicit Adam(const ParamStore& params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  // One update in place; grads[i] pairs with params.value_at(i) and may be
  // null for parameters the loss never touched. Non-finite gradients reject
  // the whole step (state and parameters untouched).
  void step(ParamStore& params, const std::vector<const Mat*>& grads, double lr);

  std::size_t steps_taken() const { return t_; }

 private:
  double b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<Mat> m_, v_;
};

struct TrainResult {
  std::vector<std::string> log_lines;  // "step,train_loss,val_loglik,lr"
  std::size_t steps_done = 0;
  bool diverged = false;
};

// Minibatch loop; leaves the model holding the last parameters that produced
// a finite loss and finite gradients. Log lines go to the result and, when
// given, to the stream as they appear.
TrainResult train(flow::FlowModel& model, const Mat& train_data, const Mat& val_data,
                  const TrainConfig& cfg, std::ostream* log_stream = nullptr);

struct Evaluation {
  double mean = 0.0;
  double half_width = 0.0;  // two standard errors
  std::size_t n = 0;
};

// Mean and 2 * (sample std / sqrt(N)) of a set of per-example values.
Evaluation summarize(const std::vector<double>& values);

Evaluation evaluate(const flow::FlowModel& model, const Mat& test);

// Per-example log-lik differences a - b, summarized the same way.
Evaluation evaluate_paired(const flow::FlowModel& a, const flow::FlowModel& b,
                           const Mat& test);

}  // namespace splineflow::training
