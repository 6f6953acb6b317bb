#include "splineflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <utility>
#include <vector>

#include "splineflow/errors.hpp"
#include "splineflow/rng.hpp"

namespace splineflow::flow {

using transforms::CouplingLayer;
using transforms::LogitSandwich;
using transforms::LULinear;
using transforms::SplineKind;

namespace {

constexpr std::size_t kChunk = 16384;

// Data -> noise layer order. Normal base: data is unconstrained, so each
// block squashes into the unit cube for its coupling and ends with a logit
// back to unconstrained noise. Uniform base: data and noise both live in the
// cube, so blocks are bare couplings (an optional LU layer gets its own
// logit/sigmoid detour since it acts on unconstrained values).
transforms::TransformStack build_stack(const ModelConfig& c) {
  transforms::TransformStack stack;
  const int D = static_cast<int>(c.dim);
  for (int i = 0; i < c.couplings; ++i) {
    const std::string tag = std::to_string(i);
    const bool flip = i % 2 == 1;
    if (c.base == BaseKind::normal) {
      if (c.linear_layers > 0) stack.add(std::make_unique<LULinear>("lu" + tag, D));
      stack.add(std::make_unique<LogitSandwich>(D, true, c.clip));
      stack.add(std::make_unique<CouplingLayer>("cpl" + tag, D, c.spline, c.bins,
                                                c.hidden, flip, c.min_bin));
      stack.add(std::make_unique<LogitSandwich>(D, false, c.clip));
    } else {
      if (c.linear_layers > 0) {
        stack.add(std::make_unique<LogitSandwich>(D, false, c.clip));
        stack.add(std::make_unique<LULinear>("lu" + tag, D));
        stack.add(std::make_unique<LogitSandwich>(D, true, c.clip));
      }
      stack.add(std::make_unique<CouplingLayer>("cpl" + tag, D, c.spline, c.bins,
                                                c.hidden, flip, c.min_bin));
    }
  }
  return stack;
}

Mat rows_slice(const Mat& m, std::size_t lo, std::size_t hi) {
  Mat out(hi - lo, m.cols(), 0.0);
  std::copy(m.row_ptr(lo), m.row_ptr(lo) + (hi - lo) * m.cols(), out.data());
  return out;
}

}  // namespace

void validate(const ModelConfig& c) {
  if (c.dim < 1) throw ConfigError("dim must be >= 1");
  if (c.bins < 1) throw ConfigError("bins must be >= 1");
  if (c.couplings < 0) throw ConfigError("couplings must be >= 0");
  if (c.linear_layers < 0 || c.linear_layers > 1) {
    throw ConfigError("linear_layers must be 0 or 1");
  }
  if (c.hidden < 1) throw ConfigError("hidden must be >= 1");
  if (!(c.clip > 0.0 && c.clip < 0.5)) throw ConfigError("clip must lie in (0, 0.5)");
  if (!(c.min_bin >= 0.0) || c.min_bin * c.bins >= 1.0) {
    throw ConfigError("min_bin must lie in [0, 1/bins)");
  }
}

FlowModel::FlowModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  validate(cfg_);
  stack_ = build_stack(cfg_);
  Rng rng(seed_);
  stack_.register_params(store_, rng);
}

Mat FlowModel::log_prob(const Mat& batch) const {
  if (batch.cols() != cfg_.dim) {
    throw NumericError("log_prob: batch has " + std::to_string(batch.cols()) +
                       " columns, model expects " + std::to_string(cfg_.dim));
  }
  const double base_const =
      0.5 * static_cast<double>(cfg_.dim) * std::log(2.0 * M_PI);
  Mat out(batch.rows(), 1, 0.0);
  for (std::size_t lo = 0; lo < batch.rows(); lo += kChunk) {
    const std::size_t hi = std::min(batch.rows(), lo + kChunk);
    auto r = stack_.forward_plain(store_, rows_slice(batch, lo, hi));
    for (std::size_t n = 0; n < hi - lo; ++n) {
      double lp;
      if (cfg_.base == BaseKind::normal) {
        double s = 0.0;
        for (std::size_t d = 0; d < cfg_.dim; ++d) {
          s = s + r.batch.at(n, d) * r.batch.at(n, d);
        }
        lp = (s * -0.5 - base_const) + r.log_det.at(n, 0);
      } else {
        for (std::size_t d = 0; d < cfg_.dim; ++d) {
          const double u = r.batch.at(n, d);
          if (!(u >= 0.0 && u <= 1.0)) {
            throw NumericError("log_prob: transformed point left the unit cube");
          }
        }
        lp = r.log_det.at(n, 0);  // log pi = 0 inside the cube
      }
      out.at(lo + n, 0) = lp;
    }
  }
  return out;
}

ad::Value FlowModel::log_prob_tape(ad::Tape& t, const Mat& batch) const {
  if (batch.cols() != cfg_.dim) {
    throw NumericError("log_prob: batch has " + std::to_string(batch.cols()) +
                       " columns, model expects " + std::to_string(cfg_.dim));
  }
  ad::Value x = t.constant(batch);
  auto r = stack_.forward_tape(t, x);
  if (cfg_.base == BaseKind::uniform) return r.log_det;
  const double base_const =
      0.5 * static_cast<double>(cfg_.dim) * std::log(2.0 * M_PI);
  ad::Value u2 = ad::row_sum(ad::mul(r.batch, r.batch));
  ad::Value base =
      ad::sub(ad::mul(u2, t.constant_scalar(-0.5)), t.constant_scalar(base_const));
  return ad::add(base, r.log_det);
}

Mat FlowModel::sample(std::size_t n, double temperature, std::uint64_t seed,
                      splines::InvertStats* stats) const {
  if (!(temperature > 0.0) || temperature > 1.0) {
    throw ConfigError("temperature must lie in (0, 1]");
  }
  if (cfg_.base == BaseKind::uniform && temperature != 1.0) {
    throw ConfigError("the uniform base only supports temperature 1");
  }
  Rng rng(seed);
  Mat out(n, cfg_.dim, 0.0);
  for (std::size_t lo = 0; lo < n; lo += kChunk) {
    const std::size_t hi = std::min(n, lo + kChunk);
    Mat u(hi - lo, cfg_.dim, 0.0);
    for (std::size_t i = 0; i < u.size(); ++i) {
      u.data()[i] = cfg_.base == BaseKind::normal ? temperature * rng.normal()
                                                  : rng.uniform();
    }
    auto r = stack_.inverse_plain(store_, u, stats);
    std::copy(r.batch.data(), r.batch.data() + r.batch.size(), out.row_ptr(lo));
  }
  return out;
}

Mat FlowModel::density_grid(std::size_t bins) const {
  if (cfg_.dim != 2) throw ConfigError("density grids need a 2-D model");
  if (bins < 1) throw ConfigError("bins must be >= 1");
  Mat pts(bins * bins, 2, 0.0);
  for (std::size_t iy = 0; iy < bins; ++iy) {
    for (std::size_t ix = 0; ix < bins; ++ix) {
      pts.at(iy * bins + ix, 0) =
          (static_cast<double>(ix) + 0.5) / static_cast<double>(bins);
      pts.at(iy * bins + ix, 1) =
          (static_cast<double>(iy) + 0.5) / static_cast<double>(bins);
    }
  }
  Mat lp = log_prob(pts);
  Mat grid(bins, bins, 0.0);
  for (std::size_t k = 0; k < bins * bins; ++k) {
    grid.data()[k] = std::exp(lp.at(k, 0));
  }
  return grid;
}

// ------------------------------------------------------------- checkpoints
//
// Single binary file, little-endian throughout:
//   magic "SPLNFLW1", u32 version,
//   u64 dim, u8 spline, u32 bins, u32 couplings, u32 linear_layers,
//   u32 hidden, u8 base, f64 clip, f64 min_bin, u64 seed,
//   u32 layer count, per layer: u8 kind, u64 dim, u32 perm length + u32 perm
//   (permutations only for LU layers),
//   u64 param count, per param: u32 name length + bytes, u64 rows, u64 cols,
//   rows*cols f64 values in row-major order.

namespace {

constexpr char kMagic[8] = {'S', 'P', 'L', 'N', 'F', 'L', 'W', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u8(std::string& b, std::uint8_t v) { b.push_back(static_cast<char>(v)); }

void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& b, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(b, bits);
}

void put_str(std::string& b, const std::string& s) {
  put_u32(b, static_cast<std::uint32_t>(s.size()));
  b.append(s);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw IoError("checkpoint file is truncated");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    }
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    }
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void FlowModel::save(const std::string& path) const {
  std::string buf;
  buf.append(kMagic, 8);
  put_u32(buf, kVersion);
  put_u64(buf, cfg_.dim);
  put_u8(buf, cfg_.spline == SplineKind::cubic ? 0 : 1);
  put_u32(buf, static_cast<std::uint32_t>(cfg_.bins));
  put_u32(buf, static_cast<std::uint32_t>(cfg_.couplings));
  put_u32(buf, static_cast<std::uint32_t>(cfg_.linear_layers));
  put_u32(buf, static_cast<std::uint32_t>(cfg_.hidden));
  put_u8(buf, cfg_.base == BaseKind::normal ? 0 : 1);
  put_f64(buf, cfg_.clip);
  put_f64(buf, cfg_.min_bin);
  put_u64(buf, seed_);

  put_u32(buf, static_cast<std::uint32_t>(stack_.size()));
  for (std::size_t i = 0; i < stack_.size(); ++i) {
    const auto& layer = stack_.layer(i);
    put_u8(buf, static_cast<std::uint8_t>(layer.kind()));
    put_u64(buf, layer.dim());
    if (const auto* lu = dynamic_cast<const LULinear*>(&layer)) {
      const auto& perm = lu->permutation();
      put_u32(buf, static_cast<std::uint32_t>(perm.size()));
      for (int p : perm) put_u32(buf, static_cast<std::uint32_t>(p));
    } else {
      put_u32(buf, 0);
    }
  }

  put_u64(buf, store_.size());
  for (std::size_t i = 0; i < store_.size(); ++i) {
    const Mat& m = store_.value_at(i);
    put_str(buf, store_.name_at(i));
    put_u64(buf, m.rows());
    put_u64(buf, m.cols());
    for (std::size_t k = 0; k < m.size(); ++k) put_f64(buf, m.data()[k]);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  f.flush();
  if (!f) throw IoError("failed while writing '" + path + "'");
}

FlowModel FlowModel::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf};

  r.need(8);
  if (std::memcmp(buf.data(), kMagic, 8) != 0) {
    throw IoError("'" + path + "' is not a flow checkpoint");
  }
  r.pos = 8;
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }

  ModelConfig cfg;
  cfg.dim = r.u64();
  const std::uint8_t spline = r.u8();
  if (spline > 1) throw IoError("checkpoint has an unknown spline kind");
  cfg.spline = spline == 0 ? SplineKind::cubic : SplineKind::quadratic;
  cfg.bins = static_cast<int>(r.u32());
  cfg.couplings = static_cast<int>(r.u32());
  cfg.linear_layers = static_cast<int>(r.u32());
  cfg.hidden = static_cast<int>(r.u32());
  const std::uint8_t base = r.u8();
  if (base > 1) throw IoError("checkpoint has an unknown base kind");
  cfg.base = base == 0 ? BaseKind::normal : BaseKind::uniform;
  cfg.clip = r.f64();
  cfg.min_bin = r.f64();
  const std::uint64_t seed = r.u64();

  std::unique_ptr<FlowModel> model;
  try {
    model = std::make_unique<FlowModel>(cfg, seed);
  } catch (const ConfigError& e) {
    throw IoError("invalid checkpoint header: " + std::string(e.what()));
  }

  const std::uint32_t n_layers = r.u32();
  if (n_layers != model->stack_.size()) {
    throw IoError("checkpoint layer count does not match its header");
  }
  for (std::size_t i = 0; i < model->stack_.size(); ++i) {
    auto& layer = model->stack_.layer(i);
    if (r.u8() != static_cast<std::uint8_t>(layer.kind()) || r.u64() != layer.dim()) {
      throw IoError("checkpoint layer " + std::to_string(i) +
                    " does not match its header");
    }
    const std::uint32_t nperm = r.u32();
    if (auto* lu = dynamic_cast<LULinear*>(&layer)) {
      if (nperm != lu->dim()) {
        throw IoError("checkpoint layer " + std::to_string(i) +
                      " has a malformed permutation");
      }
      std::vector<int> perm(nperm);
      for (auto& p : perm) p = static_cast<int>(r.u32());
      try {
        lu->set_permutation(std::move(perm));
      } catch (const NumericError& e) {
        throw IoError("checkpoint layer " + std::to_string(i) + ": " +
                      std::string(e.what()));
      }
    } else if (nperm != 0) {
      throw IoError("checkpoint layer " + std::to_string(i) +
                    " has a malformed permutation");
    }
  }

  const std::uint64_t n_params = r.u64();
  if (n_params != model->store_.size()) {
    throw IoError("checkpoint parameter count does not match its header");
  }
  for (std::size_t i = 0; i < model->store_.size(); ++i) {
    const std::string name = r.str();
    if (name != model->store_.name_at(i)) {
      throw IoError("checkpoint parameter '" + name + "' does not match '" +
                    model->store_.name_at(i) + "'");
    }
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    const Mat& want = model->store_.value_at(i);
    if (rows != want.rows() || cols != want.cols()) {
      throw IoError("checkpoint parameter '" + name + "' has shape " +
                    std::to_string(rows) + "x" + std::to_string(cols) +
                    ", expected " + want.shape_str());
    }
    Mat m(rows, cols, 0.0);
    for (std::size_t k = 0; k < m.size(); ++k) m.data()[k] = r.f64();
    model->store_.set(name, std::move(m));
  }
  if (r.pos != buf.size()) {
    throw IoError("'" + path + "' has trailing bytes after the checkpoint");
  }
  return std::move(*model);
}

}  // namespace splineflow::flow
