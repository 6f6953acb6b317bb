#include "splineflow/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <set>
#include <string>

#include "splineflow/errors.hpp"

namespace splineflow::config {

namespace {

std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return {};
  const std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

std::uint64_t parse_u64(const std::string& v, std::size_t line, const std::string& key) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    fail(line, "'" + key + "' expects a nonnegative integer, got '" + v + "'");
  }
  return out;
}

int parse_bounded_int(const std::string& v, std::size_t line, const std::string& key) {
  const std::uint64_t raw = parse_u64(v, line, key);
  if (raw > 1000000000u) fail(line, "'" + key + "' is implausibly large: '" + v + "'");
  return static_cast<int>(raw);
}

double parse_double(const std::string& v, std::size_t line, const std::string& key) {
  const char* p = v.c_str();
  char* end = nullptr;
  const double out = std::strtod(p, &end);
  if (end != p + v.size() || v.empty() || !std::isfinite(out)) {
    fail(line, "'" + key + "' expects a finite number, got '" + v + "'");
  }
  return out;
}

// shortest digit string that parses back to the same double
std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

std::string kv(const std::string& key, const std::string& value) {
  if (value.empty()) return key + " =\n";
  return key + " = " + value + "\n";
}

void validate(const RunConfig& c) {
  if (c.out_dir.empty()) throw ConfigError("run.out_dir must not be empty");
  if (c.data.kind != DataKind::grid && c.data.path.empty()) {
    throw ConfigError(std::string("data.path is required when kind = ") +
                      kind_name(c.data.kind));
  }
  if (c.data.kind != DataKind::csv && c.data.samples < 1) {
    throw ConfigError("data.samples must be >= 1");
  }
  if (!(c.data.val_fraction >= 0.0) || !(c.data.test_fraction >= 0.0) ||
      c.data.val_fraction + c.data.test_fraction >= 1.0) {
    throw ConfigError("split fractions must be >= 0 and sum to less than 1");
  }
  flow::validate(c.model);
  if (c.training.batch < 1) throw ConfigError("training.batch must be >= 1");
  if (!(c.training.lr > 0.0)) throw ConfigError("training.lr must be positive");
  if (c.training.log_every < 1) throw ConfigError("training.log_every must be >= 1");
}

}  // namespace

const char* kind_name(DataKind kind) {
  switch (kind) {
    case DataKind::grid: return "grid";
    case DataKind::image: return "image";
    case DataKind::csv: return "csv";
  }
  return "?";
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::string section;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t nl = text.find('\n', start);
    std::string raw = text.substr(
        start, nl == std::string::npos ? std::string::npos : nl - start);
    start = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;

    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "run" && section != "data" && section != "model" &&
          section != "training") {
        fail(line_no, "unknown section [" + section + "]");
      }
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected [section] or key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(line_no, "empty key");
    if (section.empty()) fail(line_no, "key '" + key + "' outside any section");
    if (!seen.insert(section + "." + key).second) {
      fail(line_no, "duplicate key '" + key + "' in [" + section + "]");
    }

    if (section == "run") {
      if (key == "seed") {
        cfg.seed = parse_u64(value, line_no, key);
      } else if (key == "out_dir") {
        cfg.out_dir = value;
      } else {
        fail(line_no, "unknown key '" + key + "' in [run]");
      }
    } else if (section == "data") {
      if (key == "kind") {
        if (value == "grid") {
          cfg.data.kind = DataKind::grid;
        } else if (value == "image") {
          cfg.data.kind = DataKind::image;
        } else if (value == "csv") {
          cfg.data.kind = DataKind::csv;
        } else {
          fail(line_no, "'kind' expects grid, image, or csv, got '" + value + "'");
        }
      } else if (key == "path") {
        cfg.data.path = value;
      } else if (key == "samples") {
        cfg.data.samples = parse_u64(value, line_no, key);
      } else if (key == "val_fraction") {
        cfg.data.val_fraction = parse_double(value, line_no, key);
      } else if (key == "test_fraction") {
        cfg.data.test_fraction = parse_double(value, line_no, key);
      } else {
        fail(line_no, "unknown key '" + key + "' in [data]");
      }
    } else if (section == "model") {
      if (key == "spline") {
        if (value == "cubic") {
          cfg.model.spline = transforms::SplineKind::cubic;
        } else if (value == "quadratic") {
          cfg.model.spline = transforms::SplineKind::quadratic;
        } else {
          fail(line_no, "'spline' expects cubic or quadratic, got '" + value + "'");
        }
      } else if (key == "bins") {
        cfg.model.bins = parse_bounded_int(value, line_no, key);
      } else if (key == "couplings") {
        cfg.model.couplings = parse_bounded_int(value, line_no, key);
      } else if (key == "linear_layers") {
        cfg.model.linear_layers = parse_bounded_int(value, line_no, key);
      } else if (key == "hidden") {
        cfg.model.hidden = parse_bounded_int(value, line_no, key);
      } else if (key == "base") {
        if (value == "normal") {
          cfg.model.base = flow::BaseKind::normal;
        } else if (value == "uniform") {
          cfg.model.base = flow::BaseKind::uniform;
        } else {
          fail(line_no, "'base' expects normal or uniform, got '" + value + "'");
        }
      } else if (key == "clip") {
        cfg.model.clip = parse_double(value, line_no, key);
      } else if (key == "min_bin") {
        cfg.model.min_bin = parse_double(value, line_no, key);
      } else {
        fail(line_no, "unknown key '" + key + "' in [model]");
      }
    } else {  // training
      if (key == "steps") {
        cfg.training.steps = parse_u64(value, line_no, key);
      } else if (key == "batch") {
        cfg.training.batch = parse_u64(value, line_no, key);
      } else if (key == "lr") {
        cfg.training.lr = parse_double(value, line_no, key);
      } else if (key == "log_every") {
        cfg.training.log_every = parse_u64(value, line_no, key);
      } else {
        fail(line_no, "unknown key '" + key + "' in [training]");
      }
    }
  }
  validate(cfg);
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return parse_config(text);
}

std::string emit_config(const RunConfig& c) {
  // The model is 2-D for grid/image data and takes its width from the CSV
  // otherwise, so dim is derived rather than a key.
  std::string s;
  s += "[run]\n";
  s += kv("seed", std::to_string(c.seed));
  s += kv("out_dir", c.out_dir);
  s += "\n[data]\n";
  s += kv("kind", kind_name(c.data.kind));
  s += kv("path", c.data.path);
  s += kv("samples", std::to_string(c.data.samples));
  s += kv("val_fraction", format_double(c.data.val_fraction));
  s += kv("test_fraction", format_double(c.data.test_fraction));
  s += "\n[model]\n";
  s += kv("spline", c.model.spline == transforms::SplineKind::cubic ? "cubic"
                                                                    : "quadratic");
  s += kv("bins", std::to_string(c.model.bins));
  s += kv("couplings", std::to_string(c.model.couplings));
  s += kv("linear_layers", std::to_string(c.model.linear_layers));
  s += kv("hidden", std::to_string(c.model.hidden));
  s += kv("base", c.model.base == flow::BaseKind::normal ? "normal" : "uniform");
  s += kv("clip", format_double(c.model.clip));
  s += kv("min_bin", format_double(c.model.min_bin));
  s += "\n[training]\n";
  s += kv("steps", std::to_string(c.training.steps));
  s += kv("batch", std::to_string(c.training.batch));
  s += kv("lr", format_double(c.training.lr));
  s += kv("log_every", std::to_string(c.training.log_every));
  return s;
}

}  // namespace splineflow::config
