#pragma once

#include <cstdint>
#include <string>

#include "splineflow/autodiff.hpp"
#include "splineflow/mat.hpp"
#include "splineflow/param_store.hpp"
#include "splineflow/splines.hpp"
#include "splineflow/transforms.hpp"

// Density model: a TransformStack oriented data -> noise plus a base
// distribution over the noise. log_prob runs the stack forward, so training
// never differentiates through the cubic root solver; sampling draws noise
// and runs the plain inverse.

namespace splineflow::flow {

enum class BaseKind { normal, uniform };

// Architecture description; together with a seed this pins the model exactly.
struct ModelConfig {
  std::size_t dim = 2;
  transforms::SplineKind spline = transforms::SplineKind::cubic;
  int bins = 128;         // K
  int couplings = 2;      // number of coupling blocks
  int linear_layers = 0;  // 1 = one LU layer per block, 0 = none
  int hidden = 64;        // conditioner hidden width
  BaseKind base = BaseKind::uniform;
  double clip = 1e-6;     // logit clamp
  double min_bin = 1e-3;  // spline bin floor
};

// Throws ConfigError on out-of-range fields; FlowModel calls this itself,
// but config parsing wants the check before any model exists.
void validate(const ModelConfig& cfg);

class FlowModel {
 public:
  // Builds the stack for the config and initializes parameters from the seed.
  FlowModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const transforms::TransformStack& stack() const { return stack_; }
  std::size_t dim() const { return cfg_.dim; }

  // Per-row log p(x); returns [N, 1]. Processes the batch in chunks.
  Mat log_prob(const Mat& batch) const;

  // Tape version of log_prob for training; returns [N, 1].
  ad::Value log_prob_tape(ad::Tape& t, const Mat& batch) const;

  // Draw n rows. Temperature scales the normal base's std; the uniform base
  // only accepts temperature 1. Deterministic given the seed.
  Mat sample(std::size_t n, double temperature, std::uint64_t seed,
             splines::InvertStats* stats = nullptr) const;

  // Binary checkpoint with a byte-exact round trip.
  void save(const std::string& path) const;
  static FlowModel load(const std::string& path);

  // exp(log_prob) at the centers of a bins x bins grid over the unit square;
  // 2-D models only. Row index is the y bin counted from the bottom.
  Mat density_grid(std::size_t bins) const;

 private:
  ModelConfig cfg_;
  std::uint64_t seed_;
  ParamStore store_;
  transforms::TransformStack stack_;
};

}  // namespace splineflow::flow
