#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "splineflow/config.hpp"
#include "splineflow/data.hpp"
#include "splineflow/errors.hpp"
#include "splineflow/flow.hpp"
#include "splineflow/selfcheck.hpp"
#include "splineflow/training.hpp"

namespace fs = std::filesystem;
using namespace splineflow;

namespace {

// A data argument is either a CSV of points in model space, or one of the
// built-in samplers: "grid:<n>:<seed>" or "image:<pgm-path>:<n>:<seed>".
struct ResolvedData {
  Mat points;
  bool is_grid = false;  // oracle density available
};

std::uint64_t parse_count(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad " + what + " '" + s + "' in data spec");
  }
}

ResolvedData resolve_data(const std::string& spec, std::size_t dim) {
  ResolvedData out;
  if (spec.rfind("grid:", 0) == 0) {
    const std::size_t mid = spec.find(':', 5);
    if (mid == std::string::npos) {
      throw ConfigError("grid data spec is grid:<n>:<seed>, got '" + spec + "'");
    }
    const std::uint64_t n = parse_count(spec.substr(5, mid - 5), "sample count");
    const std::uint64_t seed = parse_count(spec.substr(mid + 1), "seed");
    if (dim != 2) throw ConfigError("the grid dataset is 2-D");
    if (n < 1) throw ConfigError("data spec needs n >= 1");
    out.points = data::gaussian_grid(n, seed).points;
    out.is_grid = true;
    return out;
  }
  if (spec.rfind("image:", 0) == 0) {
    // the path may contain colons, so take n and seed from the right
    const std::size_t c2 = spec.rfind(':');
    const std::size_t c1 = c2 == std::string::npos ? c2 : spec.rfind(':', c2 - 1);
    if (c1 == std::string::npos || c1 < 6) {
      throw ConfigError("image data spec is image:<path>:<n>:<seed>, got '" + spec +
                        "'");
    }
    const std::string path = spec.substr(6, c1 - 6);
    const std::uint64_t n = parse_count(spec.substr(c1 + 1, c2 - c1 - 1), "sample count");
    const std::uint64_t seed = parse_count(spec.substr(c2 + 1), "seed");
    if (dim != 2) throw ConfigError("image datasets are 2-D");
    if (n < 1) throw ConfigError("data spec needs n >= 1");
    data::ImageDensity img = data::ImageDensity::from_pgm(path);
    out.points = data::image_density_sample(img, n, seed).points;
    return out;
  }
  out.points = data::read_csv(spec);
  if (out.points.cols() != dim) {
    throw ConfigError("data has " + std::to_string(out.points.cols()) +
                      " columns but the model expects " + std::to_string(dim));
  }
  return out;
}

void write_points_csv(const std::string& path, const Mat& pts) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  char buf[32];
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    std::string line;
    for (std::size_t c = 0; c < pts.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", pts.at(i, c));
      if (c) line += ',';
      line += buf;
    }
    line += '\n';
    f << line;
  }
  if (!f) throw IoError("failed while writing '" + path + "'");
}

void print_eval(const std::string& label, const training::Evaluation& ev) {
  std::printf("%s: %.6f +- %.6f nats (n=%zu)\n", label.c_str(), ev.mean,
              ev.half_width, ev.n);
}

int cmd_train(const std::string& config_path) {
  const config::RunConfig rc = config::parse_config_file(config_path);

  data::Dataset ds;
  if (rc.data.kind == config::DataKind::grid) {
    ds = data::gaussian_grid(rc.data.samples, rc.data_seed());
    data::apply_split(ds, rc.data.val_fraction, rc.data.test_fraction);
  } else if (rc.data.kind == config::DataKind::image) {
    data::ImageDensity img = data::ImageDensity::from_pgm(rc.data.path);
    ds = data::image_density_sample(img, rc.data.samples, rc.data_seed());
    data::apply_split(ds, rc.data.val_fraction, rc.data.test_fraction);
  } else {
    ds = data::load_csv_standardize(rc.data.path, rc.data.val_fraction,
                                    rc.data.test_fraction, rc.data_seed());
  }

  flow::ModelConfig mc = rc.model;
  mc.dim = ds.points.cols();
  flow::FlowModel model(mc, rc.model_seed());

  std::error_code ec;
  fs::create_directories(rc.out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + rc.out_dir + "'");
  const fs::path out(rc.out_dir);

  {
    std::ofstream echo(out / "config.ini", std::ios::binary | std::ios::trunc);
    if (!echo) throw IoError("cannot write config echo");
    echo << config::emit_config(rc);
  }

  std::printf("training %s-spline flow: D=%zu K=%d couplings=%d base=%s\n",
              mc.spline == transforms::SplineKind::cubic ? "cubic" : "quadratic",
              mc.dim, mc.bins, mc.couplings,
              mc.base == flow::BaseKind::normal ? "normal" : "uniform");
  std::printf("data: %zu train / %zu val / %zu test rows\n", ds.n_train, ds.n_val,
              ds.n_test);
  std::printf("log: %s\n", (out / "training.log").string().c_str());
  std::fflush(stdout);

  std::ofstream log_stream(out / "training.log", std::ios::binary | std::ios::trunc);
  if (!log_stream) throw IoError("cannot open the training log for writing");
  const training::TrainResult result =
      training::train(model, ds.train(), ds.val(), rc.train_config(), &log_stream);
  log_stream.close();

  const std::string ckpt = (out / "model.ckpt").string();
  model.save(ckpt);
  std::printf("checkpoint: %s\n", ckpt.c_str());

  if (ds.n_val > 0) write_points_csv((out / "val.csv").string(), ds.val());
  if (ds.n_test > 0) write_points_csv((out / "test.csv").string(), ds.test());

  if (mc.dim == 2 && rc.data.kind != config::DataKind::csv) {
    data::write_grid_csv((out / "density.csv").string(), model.density_grid(512));
    data::write_grid_pgm((out / "density.pgm").string(), model.density_grid(512));
  }

  if (result.diverged) {
    throw NumericError("training diverged at step " +
                       std::to_string(result.steps_done) +
                       "; the checkpoint holds the last finite parameters");
  }

  if (ds.n_val > 0) {
    print_eval("val log-lik", training::evaluate(model, ds.val()));
    if (rc.data.kind == config::DataKind::grid) {
      Mat oracle = data::gaussian_grid_log_density(ds.val());
      std::vector<double> vals(oracle.data(), oracle.data() + oracle.size());
      print_eval("val oracle ", training::summarize(vals));
    }
  }
  if (ds.n_test > 0) {
    print_eval("test log-lik", training::evaluate(model, ds.test()));
  }
  return 0;
}

int cmd_evaluate(const std::string& ckpt, const std::string& spec) {
  flow::FlowModel model = flow::FlowModel::load(ckpt);
  ResolvedData rd = resolve_data(spec, model.dim());
  print_eval("log-lik", training::evaluate(model, rd.points));
  if (rd.is_grid) {
    Mat oracle = data::gaussian_grid_log_density(rd.points);
    std::vector<double> vals(oracle.data(), oracle.data() + oracle.size());
    print_eval("oracle ", training::summarize(vals));
  }
  return 0;
}

int cmd_evaluate_paired(const std::string& ckpt_a, const std::string& ckpt_b,
                        const std::string& spec) {
  flow::FlowModel a = flow::FlowModel::load(ckpt_a);
  flow::FlowModel b = flow::FlowModel::load(ckpt_b);
  if (a.dim() != b.dim()) {
    throw ConfigError("the two checkpoints have different dimensions");
  }
  ResolvedData rd = resolve_data(spec, a.dim());
  const training::Evaluation d = training::evaluate_paired(a, b, rd.points);
  print_eval("log-lik difference (A - B)", d);
  const double se = d.half_width / 2.0;
  if (se > 0.0) {
    std::printf("difference / paired stderr: %.2f\n", d.mean / se);
  }
  return 0;
}

int cmd_sample(const std::string& ckpt, std::uint64_t n, double temperature,
               std::uint64_t seed, const std::string& out_path) {
  flow::FlowModel model = flow::FlowModel::load(ckpt);
  splines::InvertStats stats;
  Mat pts = model.sample(n, temperature, seed, &stats);
  write_points_csv(out_path, pts);
  std::printf("wrote %zu samples to %s\n", pts.rows(), out_path.c_str());
  if (stats.bisection_fallbacks > 0) {
    std::printf("note: %lld inversions used the bisection fallback\n",
                stats.bisection_fallbacks);
  }
  if (stats.exhaustions > 0) {
    throw NumericError("spline inversion exhausted its fallbacks " +
                       std::to_string(stats.exhaustions) + " times");
  }
  return 0;
}

int cmd_density_grid(const std::string& ckpt, std::uint64_t bins,
                     const std::string& out_path) {
  flow::FlowModel model = flow::FlowModel::load(ckpt);
  Mat grid = model.density_grid(bins);
  if (out_path.size() >= 4 && out_path.substr(out_path.size() - 4) == ".pgm") {
    data::write_grid_pgm(out_path, grid);
  } else {
    data::write_grid_csv(out_path, grid);
  }
  std::printf("wrote %zux%zu density grid to %s\n", grid.rows(), grid.cols(),
              out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spline-flow density estimation"};
  app.require_subcommand(1);
  int exit_code = 0;

  std::string config_path;
  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("config", config_path, "run config (ini)")->required();
  train->callback([&] { exit_code = cmd_train(config_path); });

  std::string eval_ckpt, eval_data;
  auto* ev = app.add_subcommand("evaluate", "mean log-likelihood on a dataset");
  ev->add_option("checkpoint", eval_ckpt)->required();
  ev->add_option("data", eval_data,
                 "points CSV, grid:<n>:<seed>, or image:<pgm>:<n>:<seed>")
      ->required();
  ev->callback([&] { exit_code = cmd_evaluate(eval_ckpt, eval_data); });

  std::string pa, pb, pdata;
  auto* evp = app.add_subcommand("evaluate-paired",
                                 "paired log-likelihood difference of two models");
  evp->add_option("checkpoint_a", pa)->required();
  evp->add_option("checkpoint_b", pb)->required();
  evp->add_option("data", pdata)->required();
  evp->callback([&] { exit_code = cmd_evaluate_paired(pa, pb, pdata); });

  std::string s_ckpt, s_out = "samples.csv";
  std::uint64_t s_n = 10000, s_seed = 0;
  double s_temp = 1.0;
  auto* smp = app.add_subcommand("sample", "draw samples from a checkpoint");
  smp->add_option("checkpoint", s_ckpt)->required();
  smp->add_option("--n", s_n, "number of samples");
  smp->add_option("--temperature", s_temp, "base-distribution temperature");
  smp->add_option("--seed", s_seed);
  smp->add_option("--out", s_out, "output CSV path");
  smp->callback([&] { exit_code = cmd_sample(s_ckpt, s_n, s_temp, s_seed, s_out); });

  std::string g_ckpt, g_out = "density.csv";
  std::uint64_t g_bins = 512;
  auto* grid = app.add_subcommand(
      "density-grid", "exp(log_prob) on a bins x bins grid over the unit square");
  grid->add_option("checkpoint", g_ckpt)->required();
  grid->add_option("--bins", g_bins);
  grid->add_option("--out", g_out, "output path (.pgm renders, else CSV)");
  grid->callback([&] { exit_code = cmd_density_grid(g_ckpt, g_bins, g_out); });

  auto* self = app.add_subcommand("selftest", "run the invariant suites");
  self->callback([&] { exit_code = selfcheck::run(std::cout) == 0 ? 0 : 3; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
