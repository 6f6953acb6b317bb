#include "splineflow/training.hpp"

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "splineflow/autodiff.hpp"
#include "splineflow/errors.hpp"
#include "splineflow/rng.hpp"

namespace splineflow::training {

double cosine_lr(std::size_t step, std::size_t total, double eta0) {
  if (total == 0 || step >= total) return 0.0;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return eta0 * 0.5 * (1.0 + std::cos(M_PI * frac));
}

Adam::Adam(const ParamStore& params, double beta1, double beta2, double eps)
    : b1_(beta1), b2_(beta2), eps_(eps) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat& p = params.value_at(i);
    m_.emplace_back(p.rows(), p.cols(), 0.0);
    v_.emplace_back(p.rows(), p.cols(), 0.0);
  }
}

void Adam::step(ParamStore& params, const std::vector<const Mat*>& grads, double lr) {
  if (grads.size() != m_.size()) {
    throw NumericError("Adam: gradient list does not match the parameter store");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i]) continue;
    if (!grads[i]->same_shape(m_[i])) {
      throw NumericError("Adam: gradient shape mismatch for '" + params.name_at(i) +
                         "'");
    }
    for (std::size_t k = 0; k < grads[i]->size(); ++k) {
      if (!std::isfinite(grads[i]->data()[k])) {
        throw NumericError("Adam: non-finite gradient for '" + params.name_at(i) +
                           "', step rejected");
      }
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i]) continue;
    Mat& p = params.value_at(i);
    const double* g = grads[i]->data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      double& m = m_[i].data()[k];
      double& v = v_[i].data()[k];
      m = b1_ * m + (1.0 - b1_) * g[k];
      v = b2_ * v + (1.0 - b2_) * g[k] * g[k];
      const double mhat = m / c1;
      const double vhat = v / c2;
      p.data()[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

namespace {

std::string log_line(std::size_t step, double train_loss, double val_loglik,
                     double lr) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g", step, train_loss,
                val_loglik, lr);
  return buf;
}

double mean_loglik(const flow::FlowModel& model, const Mat& data) {
  if (data.rows() == 0) return std::nan("");
  Mat lp = model.log_prob(data);
  double acc = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) acc += lp.data()[i];
  return acc / static_cast<double>(lp.size());
}

}  // namespace

TrainResult train(flow::FlowModel& model, const Mat& train_data, const Mat& val_data,
                  const TrainConfig& cfg, std::ostream* log_stream) {
  if (train_data.rows() == 0) throw ConfigError("training set is empty");
  if (train_data.cols() != model.dim() ||
      (val_data.rows() > 0 && val_data.cols() != model.dim())) {
    throw ConfigError("data dimension does not match the model");
  }
  if (cfg.batch == 0) throw ConfigError("batch size must be >= 1");
  // validate the data once up front, so a numeric failure mid-loop can only
  // mean the optimization itself blew up
  const bool unit = model.config().base == flow::BaseKind::uniform;
  auto check_data = [&](const Mat& d, const char* what) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double v = d.data()[i];
      if (!std::isfinite(v)) {
        throw ConfigError(std::string(what) + " contains non-finite values");
      }
      if (unit && !(v >= 0.0 && v <= 1.0)) {
        throw ConfigError(std::string(what) +
                          " lies outside the unit cube the uniform base needs");
      }
    }
  };
  check_data(train_data, "training data");
  check_data(val_data, "validation data");

  TrainResult result;
  Rng rng(cfg.seed);
  Adam adam(model.params());
  const std::size_t N = train_data.rows();
  const std::size_t D = model.dim();
  const auto& names = model.params().names();

  auto emit = [&](std::size_t step, double train_loss, double lr) {
    const double val = mean_loglik(model, val_data);
    result.log_lines.push_back(log_line(step, train_loss, val, lr));
    if (log_stream) *log_stream << result.log_lines.back() << "\n" << std::flush;
  };

  double last_loss = std::nan("");
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double lr = cosine_lr(step, cfg.steps, cfg.lr);

    Mat mb(cfg.batch, D, 0.0);
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      const std::size_t row = rng.below(N);
      for (std::size_t d = 0; d < D; ++d) mb.at(i, d) = train_data.at(row, d);
    }

    bool failed = false;
    try {
      ad::Tape t(&model.params());
      ad::Value loss = ad::negate(ad::mean_all(model.log_prob_tape(t, mb)));
      const double train_loss = loss.item();
      if (!std::isfinite(train_loss)) {
        failed = true;
      } else {
        last_loss = train_loss;
        t.backward(loss);
        std::vector<const Mat*> grads;
        grads.reserve(names.size());
        for (const auto& name : names) grads.push_back(t.param_grad(name));
        if (step % cfg.log_every == 0) emit(step, train_loss, lr);
        adam.step(model.params(), grads, lr);
      }
    } catch (const NumericError&) {
      failed = true;
    }
    if (failed) {
      result.diverged = true;
      break;
    }
    result.steps_done = step + 1;
  }

  if (!result.diverged && cfg.steps > 0) {
    // closing record after the last update; the loss is the final minibatch's
    emit(cfg.steps, last_loss, cosine_lr(cfg.steps, cfg.steps, cfg.lr));
  }
  return result;
}

Evaluation summarize(const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("evaluation set is empty");
  Evaluation ev;
  ev.n = values.size();
  double acc = 0.0;
  for (double v : values) acc += v;
  ev.mean = acc / static_cast<double>(ev.n);
  if (ev.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - ev.mean) * (v - ev.mean);
    const double sample_std = std::sqrt(ss / static_cast<double>(ev.n - 1));
    ev.half_width = 2.0 * sample_std / std::sqrt(static_cast<double>(ev.n));
  }
  return ev;
}

Evaluation evaluate(const flow::FlowModel& model, const Mat& test) {
  if (test.rows() == 0) throw ConfigError("evaluation set is empty");
  Mat lp = model.log_prob(test);
  return summarize(std::vector<double>(lp.data(), lp.data() + lp.size()));
}

Evaluation evaluate_paired(const flow::FlowModel& a, const flow::FlowModel& b,
                           const Mat& test) {
  if (test.rows() == 0) throw ConfigError("evaluation set is empty");
  Mat la = a.log_prob(test);
  Mat lb = b.log_prob(test);
  std::vector<double> diff(la.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = la.data()[i] - lb.data()[i];
  return summarize(diff);
}

}  // namespace splineflow::training
