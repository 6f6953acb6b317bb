#include "splineflow/selfcheck.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "splineflow/autodiff.hpp"
#include "splineflow/errors.hpp"
#include "splineflow/flow.hpp"
#include "splineflow/rng.hpp"
#include "splineflow/splines.hpp"
#include "splineflow/training.hpp"

namespace splineflow::selfcheck {

namespace {

namespace sp = splines;
using flow::BaseKind;
using flow::FlowModel;
using flow::ModelConfig;

struct Reporter {
  std::ostream& out;
  int failures = 0;
  int total = 0;

  void run(const std::string& name, const std::function<std::string()>& check) {
    ++total;
    std::string detail;
    try {
      detail = check();
    } catch (const std::exception& e) {
      detail = std::string("threw: ") + e.what();
    }
    if (detail.empty()) {
      out << "ok   " << name << "\n";
    } else {
      ++failures;
      out << "FAIL " << name << ": " << detail << "\n";
    }
  }
};

std::vector<double> random_theta(std::size_t len, Rng& rng, double scale) {
  std::vector<double> theta(len);
  for (double& t : theta) t = scale * rng.normal();
  return theta;
}

// Random but plausible parameters; conditioner weights stay small so their
// outputs are raw spline parameters a sane training run could produce.
void randomize_params(ParamStore& store, Rng& rng, double scale) {
  for (const std::string& name : store.names()) {
    const double s = name.find(".cond.") != std::string::npos ? 0.25 * scale : scale;
    Mat& m = store.get(name);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = s * rng.normal();
  }
}

std::string check_cubic_round_trip() {
  Rng rng(101);
  const int K = 10;
  double worst = 0.0;
  sp::InvertStats stats;
  for (int trial = 0; trial < 400; ++trial) {
    const auto c = sp::steffen_build(
        sp::knots_from_raw(random_theta(2 * K + 2, rng, 3.0), K, 1e-3));
    for (int j = 0; j < 5; ++j) {
      const double x = rng.uniform();
      const double y = sp::cubic_eval(c, x).y;
      worst = std::max(worst, std::fabs(sp::cubic_invert(c, y, &stats) - x));
    }
  }
  if (stats.exhaustions != 0) return "inversion exhausted its fallbacks";
  if (worst > 1e-9) return "round-trip error " + std::to_string(worst);
  return {};
}

std::string check_quadratic_round_trip() {
  Rng rng(102);
  const int K = 10;
  double worst = 0.0;
  for (int trial = 0; trial < 400; ++trial) {
    const auto p = sp::quadratic_build(random_theta(2 * K + 1, rng, 3.0), K, 1e-3);
    for (int j = 0; j < 5; ++j) {
      const double x = rng.uniform();
      const double y = sp::quadratic_transform(p, x, false).y;
      worst = std::max(worst, std::fabs(sp::quadratic_transform(p, y, true).y - x));
    }
  }
  if (worst > 1e-9) return "round-trip error " + std::to_string(worst);
  return {};
}

std::string check_identity_spline() {
  // uniform knots with boundary derivatives 1 make the exact identity
  const int K = 4;
  sp::KnotSet ks;
  ks.K = K;
  for (int k = 0; k <= K; ++k) {
    ks.x.push_back(static_cast<double>(k) / K);
    ks.y.push_back(static_cast<double>(k) / K);
  }
  ks.d0_raw = 1.0;
  ks.dK_raw = 1.0;
  const auto c = sp::steffen_build(ks);
  for (double x : {0.0, 0.125, 0.5, 0.817, 1.0}) {
    const auto r = sp::cubic_eval(c, x);
    if (std::fabs(r.y - x) > 1e-12) return "identity maps " + std::to_string(x);
    if (std::fabs(r.log_deriv) > 1e-12) return "identity log-deriv nonzero";
  }
  return {};
}

std::string check_stack_log_det() {
  ModelConfig cfg;
  cfg.dim = 3;
  cfg.bins = 5;
  cfg.couplings = 2;
  cfg.linear_layers = 1;
  cfg.hidden = 8;
  cfg.base = BaseKind::normal;
  FlowModel m(cfg, 103);
  Rng rng(104);
  randomize_params(m.params(), rng, 0.4);

  auto map = [&](const Mat& x) {
    return m.stack().forward_plain(m.params(), x).batch;
  };
  Rng rx(105);
  const double eps = 1e-6;
  for (int trial = 0; trial < 5; ++trial) {
    Mat x(1, 3, 0.0);
    for (std::size_t d = 0; d < 3; ++d) x.at(0, d) = rx.normal();
    const double ld = m.stack().forward_plain(m.params(), x).log_det.at(0, 0);

    double J[3][3];
    for (std::size_t j = 0; j < 3; ++j) {
      Mat xp = x, xm = x;
      xp.at(0, j) += eps;
      xm.at(0, j) -= eps;
      Mat fp = map(xp), fm = map(xm);
      for (std::size_t i = 0; i < 3; ++i) {
        J[i][j] = (fp.at(0, i) - fm.at(0, i)) / (2.0 * eps);
      }
    }
    const double det = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
                       J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
                       J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
    const double rel = std::fabs(ld - std::log(std::fabs(det))) /
                       std::max(1.0, std::fabs(ld));
    if (!(rel < 1e-4)) return "log-det off by rel " + std::to_string(rel);
  }
  return {};
}

std::string check_gradients() {
  ModelConfig cfg;
  cfg.dim = 2;
  cfg.bins = 4;
  cfg.couplings = 2;
  cfg.linear_layers = 1;
  cfg.hidden = 6;
  cfg.base = BaseKind::normal;
  FlowModel m(cfg, 31);
  Rng rng(32);
  randomize_params(m.params(), rng, 0.4);
  Rng rx(33);
  Mat x(5, 2, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = rx.normal();
  const double err = ad::grad_check(
      m.params(),
      [&](ad::Tape& t) { return ad::negate(ad::mean_all(m.log_prob_tape(t, x))); },
      1e-5);
  if (!(err < 1e-4)) return "max relative error " + std::to_string(err);
  return {};
}

std::string check_normalization_1d() {
  ModelConfig cfg;
  cfg.dim = 1;
  cfg.bins = 8;
  cfg.couplings = 1;
  cfg.hidden = 4;
  cfg.base = BaseKind::normal;
  FlowModel m(cfg, 109);
  Rng rng(110);
  randomize_params(m.params(), rng, 0.5);

  const std::size_t n = 20001;
  const double lo = -30.0, hi = 30.0;
  const double h = (hi - lo) / static_cast<double>(n - 1);
  Mat xs(n, 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) xs.at(i, 0) = lo + h * static_cast<double>(i);
  Mat lp = m.log_prob(xs);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    acc += w * std::exp(lp.at(i, 0)) * h;
  }
  if (!(std::fabs(acc - 1.0) < 1e-2)) return "integral " + std::to_string(acc);
  return {};
}

std::string check_sampling() {
  ModelConfig cfg;
  cfg.dim = 2;
  cfg.bins = 8;
  cfg.couplings = 2;
  cfg.hidden = 8;
  cfg.base = BaseKind::uniform;
  FlowModel m(cfg, 111);
  Rng rng(112);
  randomize_params(m.params(), rng, 0.5);

  sp::InvertStats stats;
  Mat s = m.sample(5000, 1.0, 113, &stats);
  if (stats.exhaustions != 0) return "inversion exhausted its fallbacks";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!(s.data()[i] >= 0.0 && s.data()[i] <= 1.0)) return "sample left the cube";
  }
  Mat lp = m.log_prob(s);
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (!std::isfinite(lp.data()[i])) return "non-finite log_prob on own samples";
  }
  return {};
}

std::string check_tape_parity() {
  for (auto base : {BaseKind::uniform, BaseKind::normal}) {
    ModelConfig cfg;
    cfg.dim = 3;
    cfg.bins = 5;
    cfg.couplings = 2;
    cfg.linear_layers = 1;
    cfg.hidden = 8;
    cfg.base = base;
    FlowModel m(cfg, 114);
    Rng rng(115);
    randomize_params(m.params(), rng, 0.5);
    Rng rx(116);
    Mat x(16, 3, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x.data()[i] = base == BaseKind::uniform ? rx.uniform(0.05, 0.95) : rx.normal();
    }
    Mat plain = m.log_prob(x);
    ad::Tape t(&m.params());
    ad::Value lp = m.log_prob_tape(t, x);
    for (std::size_t n = 0; n < x.rows(); ++n) {
      if (lp.val().at(n, 0) != plain.at(n, 0)) return "tape and plain paths differ";
    }
  }
  return {};
}

std::string check_checkpoint() {
  ModelConfig cfg;
  cfg.dim = 3;
  cfg.bins = 6;
  cfg.couplings = 2;
  cfg.linear_layers = 1;
  cfg.hidden = 8;
  cfg.base = BaseKind::normal;
  FlowModel m(cfg, 117);
  Rng rng(118);
  randomize_params(m.params(), rng, 0.5);

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path();
  const std::string p1 = (dir / "splineflow_selfcheck_a.ckpt").string();
  const std::string p2 = (dir / "splineflow_selfcheck_b.ckpt").string();
  m.save(p1);
  FlowModel loaded = FlowModel::load(p1);
  loaded.save(p2);
  auto slurp = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
  };
  const bool same = slurp(p1) == slurp(p2);
  fs::remove(p1);
  fs::remove(p2);
  if (!same) return "save/load/save bytes differ";
  return {};
}

std::string check_training_determinism() {
  auto run_once = [](std::vector<double>* out) {
    ModelConfig cfg;
    cfg.dim = 2;
    cfg.bins = 6;
    cfg.couplings = 2;
    cfg.hidden = 8;
    cfg.base = BaseKind::uniform;
    FlowModel m(cfg, 119);
    Rng rng(120);
    Mat train(512, 2, 0.0);
    for (std::size_t i = 0; i < train.size(); ++i) {
      train.data()[i] = rng.uniform(0.02, 0.98);
    }
    training::TrainConfig tc;
    tc.steps = 30;
    tc.batch = 64;
    tc.lr = 1e-3;
    tc.log_every = 10;
    tc.seed = 121;
    training::TrainResult r = training::train(m, train, Mat(), tc);
    if (r.diverged) return false;
    out->clear();
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      const Mat& p = m.params().value_at(i);
      out->insert(out->end(), p.data(), p.data() + p.size());
    }
    return true;
  };
  std::vector<double> a, b;
  if (!run_once(&a) || !run_once(&b)) return "short training run diverged";
  if (a != b) return "two identical runs produced different parameters";
  return {};
}

}  // namespace

int run(std::ostream& out) {
  Reporter r{out};
  r.run("cubic spline round trip", check_cubic_round_trip);
  r.run("quadratic spline round trip", check_quadratic_round_trip);
  r.run("identity spline", check_identity_spline);
  r.run("stack log-det vs finite differences", check_stack_log_det);
  r.run("gradient check", check_gradients);
  r.run("1-D normalization", check_normalization_1d);
  r.run("sampling", check_sampling);
  r.run("tape/plain parity", check_tape_parity);
  r.run("checkpoint round trip", check_checkpoint);
  r.run("training determinism", check_training_determinism);
  out << "selfcheck: " << (r.total - r.failures) << "/" << r.total
      << " checks passed\n";
  return r.failures;
}

}  // namespace splineflow::selfcheck
