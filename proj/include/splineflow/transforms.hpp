#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "splineflow/autodiff.hpp"
#include "splineflow/conditioner.hpp"
#include "splineflow/mat.hpp"
#include "splineflow/param_store.hpp"
#include "splineflow/rng.hpp"
#include "splineflow/splines.hpp"

// Invertible layers and their composition. Every layer offers three paths:
// a tape forward (for training), a plain forward, and a plain inverse (for
// sampling and evaluation). Tape and plain forwards compute identical values;
// training never differentiates through a root solve because the tape only
// ever runs the forward (data -> noise) direction.

namespace splineflow::transforms {

enum class SplineKind { cubic, quadratic };
enum class LayerKind { coupling, lu_linear, to_unit, from_unit };

struct PlainResult {
  Mat batch;    // [N, D]
  Mat log_det;  // [N, 1]
};

struct TapeResult {
  ad::Value batch;
  ad::Value log_det;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;
  virtual std::size_t dim() const = 0;
  // Create and initialize this layer's parameters (no-op for layers without).
  virtual void register_params(ParamStore& store, Rng& rng) = 0;
  virtual std::vector<std::string> param_names() const { return {}; }
  virtual TapeResult forward_tape(ad::Tape& t, ad::Value x) const = 0;
  virtual PlainResult forward_plain(const ParamStore& store, const Mat& x) const = 0;
  virtual PlainResult inverse_plain(const ParamStore& store, const Mat& y,
                                    splines::InvertStats* stats = nullptr) const = 0;
};

// Spline coupling in the unit cube. The identity half passes through
// elementwise trainable splines; the transformed half goes through splines
// whose raw parameters come from a conditioner reading the post-elementwise
// identity half (so the inverse can rebuild them from its own input). With
// flip = false the identity half is the first ceil(D/2) dims; with flip =
// true the halves swap roles. D = 1 degenerates to a single elementwise
// spline with no conditioner.
class CouplingLayer : public Layer {
 public:
  CouplingLayer(std::string prefix, int D, SplineKind spline, int K, int hidden,
                bool flip, double min_bin);

  LayerKind kind() const override { return LayerKind::coupling; }
  std::size_t dim() const override { return static_cast<std::size_t>(D_); }
  void register_params(ParamStore& store, Rng& rng) override;
  std::vector<std::string> param_names() const override;
  TapeResult forward_tape(ad::Tape& t, ad::Value x) const override;
  PlainResult forward_plain(const ParamStore& store, const Mat& x) const override;
  PlainResult inverse_plain(const ParamStore& store, const Mat& y,
                            splines::InvertStats* stats = nullptr) const override;

  int params_per_dim() const;
  bool flipped() const { return flip_; }

 private:
  std::string prefix_;
  int D_;
  SplineKind spline_;
  int K_;
  bool flip_;
  double min_bin_;
  std::size_t id_lo_, id_hi_;  // identity-half column range
  std::size_t tr_lo_, tr_hi_;  // transformed-half column range (empty if D = 1)
  std::optional<conditioner::ResidualMLP> cond_;
};

// y = W x with W = P L U: unit-lower-triangular L, upper-triangular U whose
// diagonal is stored in logs, and a permutation P fixed at initialization.
// Starts as the pure permutation (L = U = I).
class LULinear : public Layer {
 public:
  LULinear(std::string prefix, int D);

  LayerKind kind() const override { return LayerKind::lu_linear; }
  std::size_t dim() const override { return static_cast<std::size_t>(D_); }
  void register_params(ParamStore& store, Rng& rng) override;
  std::vector<std::string> param_names() const override;
  TapeResult forward_tape(ad::Tape& t, ad::Value x) const override;
  PlainResult forward_plain(const ParamStore& store, const Mat& x) const override;
  PlainResult inverse_plain(const ParamStore& store, const Mat& y,
                            splines::InvertStats* stats = nullptr) const override;

  const std::vector<int>& permutation() const { return perm_; }
  // Restore a permutation from a checkpoint (must be a valid permutation).
  void set_permutation(std::vector<int> perm);

 private:
  std::string prefix_;
  int D_;
  std::vector<int> perm_;
  Mat mask_lower_, mask_upper_, eye_, pmat_;

  void rebuild_pmat();
};

// One side of the sigmoid/logit sandwich. to_unit squashes reals into (0,1)
// with a sigmoid; from_unit clamps into [clip, 1-clip] and applies the logit.
// Each direction is the exact inverse of the other away from the clamp.
class LogitSandwich : public Layer {
 public:
  LogitSandwich(int D, bool to_unit, double clip = 1e-6);

  LayerKind kind() const override {
    return to_unit_ ? LayerKind::to_unit : LayerKind::from_unit;
  }
  std::size_t dim() const override { return static_cast<std::size_t>(D_); }
  void register_params(ParamStore&, Rng&) override {}
  TapeResult forward_tape(ad::Tape& t, ad::Value x) const override;
  PlainResult forward_plain(const ParamStore& store, const Mat& x) const override;
  PlainResult inverse_plain(const ParamStore& store, const Mat& y,
                            splines::InvertStats* stats = nullptr) const override;

  double clip() const { return clip_; }

 private:
  int D_;
  bool to_unit_;
  double clip_;
};

// Ordered composition with log-det accumulation. Inverse applies the layers'
// inverses in reversed order. Non-finite values after any layer are reported
// with that layer's index.
class TransformStack {
 public:
  void add(std::unique_ptr<Layer> layer);
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }

  void register_params(ParamStore& store, Rng& rng);
  std::vector<std::string> param_names() const;

  TapeResult forward_tape(ad::Tape& t, ad::Value x) const;
  PlainResult forward_plain(const ParamStore& store, const Mat& x) const;
  PlainResult inverse_plain(const ParamStore& store, const Mat& y,
                            splines::InvertStats* stats = nullptr) const;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace splineflow::transforms
