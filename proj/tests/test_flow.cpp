#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "splineflow/autodiff.hpp"
#include "splineflow/errors.hpp"
#include "splineflow/flow.hpp"
#include "splineflow/rng.hpp"

using namespace splineflow;
using flow::BaseKind;
using flow::FlowModel;
using flow::ModelConfig;
using transforms::SplineKind;

namespace {

void randomize_params(ParamStore& store, Rng& rng, double scale) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string name = store.name_at(i);
    const double s = name.find(".cond.") != std::string::npos ? 0.25 * scale : scale;
    Mat m = store.value_at(i);
    for (std::size_t k = 0; k < m.size(); ++k) m.data()[k] = s * rng.normal();
    store.set(name, m);
  }
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Trapezoid integral of exp(log_prob) for a D = 1 model over [lo, hi].
double integrate_density(const FlowModel& m, double lo, double hi, std::size_t points) {
  Mat grid(points, 1, 0.0);
  const double h = (hi - lo) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) grid.at(i, 0) = lo + h * static_cast<double>(i);
  Mat lp = m.log_prob(grid);
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < points; ++i) {
    acc += 0.5 * h * (std::exp(lp.at(i, 0)) + std::exp(lp.at(i + 1, 0)));
  }
  return acc;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("empty stack log_prob is the base log-density") {
  ModelConfig cfg;
  cfg.dim = 2;
  cfg.couplings = 0;
  cfg.base = BaseKind::normal;
  FlowModel normal(cfg, 1);
  Mat x(3, 2, 0.0);
  x.at(1, 0) = 1.0;
  x.at(1, 1) = 2.0;
  x.at(2, 0) = -0.5;
  Mat lp = normal.log_prob(x);
  CHECK(lp.at(0, 0) == doctest::Approx(-1.837877).epsilon(1e-6));
  CHECK(lp.at(0, 0) == doctest::Approx(-std::log(2.0 * M_PI)).epsilon(1e-15));
  CHECK(lp.at(1, 0) == doctest::Approx(-0.5 * 5.0 - std::log(2.0 * M_PI)).epsilon(1e-15));
  CHECK(lp.at(2, 0) == doctest::Approx(-0.125 - std::log(2.0 * M_PI)).epsilon(1e-15));

  cfg.base = BaseKind::uniform;
  FlowModel uniform(cfg, 1);
  Mat u(2, 2, 0.25);
  u.at(1, 0) = 0.0;
  u.at(1, 1) = 1.0;
  Mat lpu = uniform.log_prob(u);
  CHECK(lpu.at(0, 0) == 0.0);
  CHECK(lpu.at(1, 0) == 0.0);

  Mat out(1, 2, 1.5);
  CHECK_THROWS_AS(uniform.log_prob(out), NumericError);
  Mat wrong(1, 3, 0.5);
  CHECK_THROWS_WITH_AS(normal.log_prob(wrong), doctest::Contains("columns"), NumericError);
}

TEST_CASE("config validation rejects bad fields") {
  ModelConfig cfg;
  cfg.bins = 0;
  CHECK_THROWS_WITH_AS(FlowModel(cfg, 1), doctest::Contains("bins"), ConfigError);
  cfg = ModelConfig{};
  cfg.clip = 0.7;
  CHECK_THROWS_WITH_AS(FlowModel(cfg, 1), doctest::Contains("clip"), ConfigError);
  cfg = ModelConfig{};
  cfg.linear_layers = 2;
  CHECK_THROWS_WITH_AS(FlowModel(cfg, 1), doctest::Contains("linear_layers"), ConfigError);
  cfg = ModelConfig{};
  cfg.bins = 4;
  cfg.min_bin = 0.3;
  CHECK_THROWS_WITH_AS(FlowModel(cfg, 1), doctest::Contains("min_bin"), ConfigError);
  cfg = ModelConfig{};
  cfg.dim = 0;
  CHECK_THROWS_AS(FlowModel(cfg, 1), ConfigError);
}

TEST_CASE("D=1 uniform model integrates to one") {
  ModelConfig cfg;
  cfg.dim = 1;
  cfg.bins = 10;
  cfg.couplings = 2;
  cfg.hidden = 8;
  cfg.base = BaseKind::uniform;
  FlowModel m(cfg, 42);
  Rng rng(43);
  randomize_params(m.params(), rng, 1.5);
  const double mass = integrate_density(m, 0.0, 1.0, 20001);
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("D=1 normal model integrates to one on a wide grid") {
  ModelConfig cfg;
  cfg.dim = 1;
  cfg.bins = 8;
  cfg.couplings = 1;
  cfg.linear_layers = 1;
  cfg.hidden = 8;
  cfg.base = BaseKind::normal;
  FlowModel m(cfg, 7);
  Rng rng(8);
  randomize_params(m.params(), rng, 0.5);
  // pin the linear scale so the support stays well inside the grid
  m.params().set("lu0.logdiag", Mat::scalar(0.3));
  const double mass = integrate_density(m, -40.0, 40.0, 80001);
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-2));
}

TEST_CASE("empty-stack sampling draws from the base distribution") {
  ModelConfig cfg;
  cfg.dim = 1;
  cfg.couplings = 0;
  cfg.base = BaseKind::normal;
  FlowModel normal(cfg, 1);

  const std::size_t n = 10000;
  Mat s = normal.sample(n, 1.0, 99);
  std::vector<double> v(s.data(), s.data() + n);
  std::sort(v.begin(), v.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double F = std_normal_cdf(v[i]);
    ks = std::max(ks, std::fabs(F - static_cast<double>(i) / n));
    ks = std::max(ks, std::fabs(static_cast<double>(i + 1) / n - F));
  }
  CHECK(ks < 1.63 / std::sqrt(static_cast<double>(n)));  // 1% critical value

  // temperature -> 0 collapses the samples onto the origin
  Mat tiny = normal.sample(100, 1e-9, 4);
  for (std::size_t i = 0; i < tiny.size(); ++i) CHECK(std::fabs(tiny.data()[i]) < 1e-7);

  cfg.base = BaseKind::uniform;
  FlowModel uniform(cfg, 1);
  Mat su = uniform.sample(n, 1.0, 3);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(su.data()[i] >= 0.0);
    CHECK(su.data()[i] < 1.0);
    mean += su.data()[i];
  }
  mean /= static_cast<double>(n);
  CHECK(mean == doctest::Approx(0.5).epsilon(0.02));

  CHECK_THROWS_WITH_AS(uniform.sample(10, 0.5, 1), doctest::Contains("uniform"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(normal.sample(10, 0.0, 1), doctest::Contains("temperature"),
                       ConfigError);
  CHECK_THROWS_AS(normal.sample(10, -1.0, 1), ConfigError);
  CHECK_THROWS_AS(normal.sample(10, 1.5, 1), ConfigError);
}

TEST_CASE("sampling is seed-deterministic and log_prob of samples is finite") {
  ModelConfig cfg;
  cfg.dim = 2;
  cfg.bins = 8;
  cfg.couplings = 2;
  cfg.hidden = 16;
  cfg.base = BaseKind::uniform;
  FlowModel m(cfg, 11);
  Rng rng(12);
  randomize_params(m.params(), rng, 0.8);

  splines::InvertStats stats;
  Mat a = m.sample(10000, 1.0, 5, &stats);
  Mat b = m.sample(10000, 1.0, 5);
  Mat c = m.sample(10000, 1.0, 6);
  CHECK(stats.exhaustions == 0);
  bool identical = true, differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    identical = identical && a.data()[i] == b.data()[i];
    differs = differs || a.data()[i] != c.data()[i];
  }
  CHECK(identical);
  CHECK(differs);

  Mat lp = m.log_prob(a);
  for (std::size_t i = 0; i < lp.size(); ++i) CHECK(std::isfinite(lp.data()[i]));
}

TEST_CASE("tape log_prob matches the plain path bitwise") {
  for (auto base : {BaseKind::uniform, BaseKind::normal}) {
    ModelConfig cfg;
    cfg.dim = 3;
    cfg.bins = 5;
    cfg.couplings = 2;
    cfg.linear_layers = 1;
    cfg.hidden = 8;
    cfg.base = base;
    FlowModel m(cfg, 21);
    Rng rng(22);
    randomize_params(m.params(), rng, 0.5);

    Rng rx(23);
    Mat x(7, 3, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x.data()[i] = base == BaseKind::uniform ? rx.uniform(0.05, 0.95) : rx.normal();
    }
    Mat plain = m.log_prob(x);
    ad::Tape t(&m.params());
    ad::Value lp = m.log_prob_tape(t, x);
    REQUIRE(lp.rows() == 7);
    REQUIRE(lp.cols() == 1);
    for (std::size_t n = 0; n < 7; ++n) {
      CHECK(lp.val().at(n, 0) == plain.at(n, 0));
    }
  }
}

TEST_CASE("log_prob gradients match finite differences") {
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
  CHECK(err < 1e-4);
}

TEST_CASE("checkpoint round trip is byte-exact and preserves behavior") {
  ModelConfig cfg;
  cfg.dim = 5;
  cfg.bins = 6;
  cfg.couplings = 2;
  cfg.linear_layers = 1;
  cfg.hidden = 12;
  cfg.base = BaseKind::normal;
  cfg.spline = SplineKind::quadratic;
  cfg.clip = 1e-5;
  cfg.min_bin = 5e-3;
  FlowModel m(cfg, 77);
  Rng rng(78);
  randomize_params(m.params(), rng, 0.5);

  const std::string p1 = "ckpt_roundtrip_a.bin";
  const std::string p2 = "ckpt_roundtrip_b.bin";
  m.save(p1);
  FlowModel loaded = FlowModel::load(p1);
  loaded.save(p2);
  CHECK(read_file(p1) == read_file(p2));

  CHECK(loaded.config().dim == 5);
  CHECK(loaded.config().spline == SplineKind::quadratic);
  CHECK(loaded.config().clip == 1e-5);
  CHECK(loaded.seed() == 77);

  Rng rx(79);
  Mat x(6, 5, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = rx.normal();
  Mat lp0 = m.log_prob(x);
  Mat lp1 = loaded.log_prob(x);
  for (std::size_t i = 0; i < lp0.size(); ++i) CHECK(lp0.data()[i] == lp1.data()[i]);

  Mat s0 = m.sample(64, 0.8, 5);
  Mat s1 = loaded.sample(64, 0.8, 5);
  for (std::size_t i = 0; i < s0.size(); ++i) CHECK(s0.data()[i] == s1.data()[i]);

  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoint loading rejects broken files") {
  CHECK_THROWS_AS(FlowModel::load("no_such_checkpoint.bin"), IoError);

  ModelConfig cfg;
  cfg.dim = 2;
  cfg.bins = 3;
  cfg.couplings = 1;
  cfg.hidden = 4;
  FlowModel m(cfg, 1);
  const std::string path = "ckpt_broken.bin";
  m.save(path);
  std::string bytes = read_file(path);

  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_WITH_AS(FlowModel::load(path), doctest::Contains("truncated"), IoError);

  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bad.data(), static_cast<std::streamsize>(bad.size()));
  }
  CHECK_THROWS_WITH_AS(FlowModel::load(path), doctest::Contains("not a flow checkpoint"),
                       IoError);

  {
    std::string bad = bytes + "junk";
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bad.data(), static_cast<std::streamsize>(bad.size()));
  }
  CHECK_THROWS_WITH_AS(FlowModel::load(path), doctest::Contains("trailing"), IoError);

  std::remove(path.c_str());
}

TEST_CASE("1-D samples match the model CDF") {
  ModelConfig cfg;
  cfg.dim = 1;
  cfg.bins = 10;
  cfg.couplings = 2;
  cfg.hidden = 8;
  cfg.base = BaseKind::uniform;
  FlowModel m(cfg, 51);
  Rng rng(52);
  randomize_params(m.params(), rng, 1.5);

  // model CDF by cumulative trapezoid on a fine grid
  const std::size_t pts = 20001;
  Mat grid(pts, 1, 0.0);
  const double h = 1.0 / static_cast<double>(pts - 1);
  for (std::size_t i = 0; i < pts; ++i) grid.at(i, 0) = h * static_cast<double>(i);
  Mat lp = m.log_prob(grid);
  std::vector<double> cdf(pts, 0.0);
  for (std::size_t i = 1; i < pts; ++i) {
    cdf[i] = cdf[i - 1] + 0.5 * h * (std::exp(lp.at(i - 1, 0)) + std::exp(lp.at(i, 0)));
  }
  const double total = cdf.back();
  REQUIRE(total == doctest::Approx(1.0).epsilon(1e-3));
  for (auto& c : cdf) c /= total;

  const std::size_t n = 100000;
  Mat s = m.sample(n, 1.0, 53);
  std::vector<double> v(s.data(), s.data() + n);
  std::sort(v.begin(), v.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = v[i] / h;
    const std::size_t k = std::min(static_cast<std::size_t>(g), pts - 2);
    const double F = cdf[k] + (g - static_cast<double>(k)) * (cdf[k + 1] - cdf[k]);
    ks = std::max(ks, std::fabs(F - static_cast<double>(i) / n));
    ks = std::max(ks, std::fabs(static_cast<double>(i + 1) / n - F));
  }
  CHECK(ks < 0.01);
}
