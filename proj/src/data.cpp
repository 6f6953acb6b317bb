#include "splineflow/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "splineflow/errors.hpp"
#include "splineflow/rng.hpp"

namespace splineflow::data {

namespace {

Mat rows_copy(const Mat& m, std::size_t lo, std::size_t hi) {
  Mat out(hi - lo, m.cols(), 0.0);
  std::copy(m.row_ptr(lo), m.row_ptr(lo) + (hi - lo) * m.cols(), out.data());
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

Mat Dataset::train() const { return rows_copy(points, 0, n_train); }
Mat Dataset::val() const { return rows_copy(points, n_train, n_train + n_val); }
Mat Dataset::test() const {
  return rows_copy(points, n_train + n_val, n_train + n_val + n_test);
}

Mat Dataset::destandardize(const Mat& pts) const {
  if (shift.empty()) return pts;
  if (pts.cols() != shift.size()) {
    throw NumericError("destandardize: column count does not match the affine");
  }
  Mat out = pts;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) {
      out.at(r, c) = out.at(r, c) * scale[c] + shift[c];
    }
  }
  return out;
}

double Dataset::std_log_correction() const {
  double acc = 0.0;
  for (double s : scale) acc += std::log(s);
  return acc;
}

void apply_split(Dataset& ds, double val_fraction, double test_fraction) {
  if (!(val_fraction >= 0.0) || !(test_fraction >= 0.0) ||
      val_fraction + test_fraction >= 1.0) {
    throw ConfigError("split fractions must be >= 0 and sum to less than 1");
  }
  const std::size_t N = ds.rows();
  ds.n_val = static_cast<std::size_t>(static_cast<double>(N) * val_fraction);
  ds.n_test = static_cast<std::size_t>(static_cast<double>(N) * test_fraction);
  if (ds.n_val + ds.n_test >= N) throw ConfigError("split leaves no training rows");
  ds.n_train = N - ds.n_val - ds.n_test;
}

// ------------------------------------------------------------ 225-Gaussian

namespace {

double grid_coord(int k) {
  return kGridLo + (kGridHi - kGridLo) * static_cast<double>(k) / (kGridSide - 1);
}

}  // namespace

Dataset gaussian_grid(std::size_t n, std::uint64_t seed, double sigma) {
  if (n == 0) throw ConfigError("sample count must be >= 1");
  if (!(sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
  Rng rng(seed);
  Dataset ds;
  ds.points = Mat(n, 2, 0.0);
  ds.tag = "gaussian-grid-225";
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<int>(rng.below(kGridComponents));
    const double mx = grid_coord(c / kGridSide);
    const double my = grid_coord(c % kGridSide);
    ds.points.at(i, 0) = mx + sigma * rng.normal();
    ds.points.at(i, 1) = my + sigma * rng.normal();
  }
  ds.n_train = n;
  return ds;
}

double gaussian_grid_log_density(double x, double y, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0 for densities");
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  double ex[kGridComponents];
  double best = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < kGridComponents; ++c) {
    const double dx = x - grid_coord(c / kGridSide);
    const double dy = y - grid_coord(c % kGridSide);
    ex[c] = -(dx * dx + dy * dy) * inv2s2;
    best = std::max(best, ex[c]);
  }
  double acc = 0.0;
  for (int c = 0; c < kGridComponents; ++c) acc += std::exp(ex[c] - best);
  return std::log(acc) + best - std::log(static_cast<double>(kGridComponents)) -
         std::log(2.0 * M_PI * sigma * sigma);
}

Mat gaussian_grid_log_density(const Mat& pts, double sigma) {
  if (pts.cols() != 2) throw NumericError("grid density needs [N,2] points");
  Mat out(pts.rows(), 1, 0.0);
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    out.at(i, 0) = gaussian_grid_log_density(pts.at(i, 0), pts.at(i, 1), sigma);
  }
  return out;
}

// ------------------------------------------------------------ image density

ImageDensity ImageDensity::from_grid(Mat image) {
  if (image.rows() == 0 || image.cols() == 0) {
    throw NumericError("image is empty");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = image.data()[i];
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw NumericError("image intensities must be finite and nonnegative");
    }
    total += v;
  }
  if (!(total > 0.0)) throw NumericError("image intensity is all zero");
  ImageDensity img;
  img.intensity = std::move(image);
  img.total = total;
  return img;
}

ImageDensity ImageDensity::from_pgm(const std::string& path) {
  return from_grid(read_pgm(path));
}

Dataset image_density_sample(const ImageDensity& img, std::size_t n,
                             std::uint64_t seed) {
  if (n == 0) throw ConfigError("sample count must be >= 1");
  const std::size_t H = img.intensity.rows(), W = img.intensity.cols();
  std::vector<double> cum(H * W, 0.0);
  double run = 0.0;
  for (std::size_t k = 0; k < H * W; ++k) {
    run += img.intensity.data()[k] / img.total;
    cum[k] = run;
  }
  Rng rng(seed);
  Dataset ds;
  ds.points = Mat(n, 2, 0.0);
  ds.tag = "image-density";
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t k = static_cast<std::size_t>(
        std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    if (k >= H * W) k = H * W - 1;
    const std::size_t r = k / W, c = k % W;
    ds.points.at(i, 0) = (static_cast<double>(c) + rng.uniform()) / static_cast<double>(W);
    ds.points.at(i, 1) =
        (static_cast<double>(H - 1 - r) + rng.uniform()) / static_cast<double>(H);
  }
  ds.n_train = n;
  return ds;
}

double image_density_log_density(const ImageDensity& img, double x, double y) {
  if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0)) {
    throw NumericError("image density is defined on [0,1]^2 only");
  }
  const std::size_t H = img.intensity.rows(), W = img.intensity.cols();
  const std::size_t c =
      std::min(static_cast<std::size_t>(x * static_cast<double>(W)), W - 1);
  const std::size_t from_bottom =
      std::min(static_cast<std::size_t>(y * static_cast<double>(H)), H - 1);
  const std::size_t r = H - 1 - from_bottom;
  const double p = img.intensity.at(r, c) / img.total;
  return std::log(p * static_cast<double>(H) * static_cast<double>(W));
}

Mat image_density_log_density(const ImageDensity& img, const Mat& pts) {
  if (pts.cols() != 2) throw NumericError("image density needs [N,2] points");
  Mat out(pts.rows(), 1, 0.0);
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    out.at(i, 0) = image_density_log_density(img, pts.at(i, 0), pts.at(i, 1));
  }
  return out;
}

// ----------------------------------------------------------------- CSV

namespace {

// strict numeric cell parse; leading/trailing blanks allowed
bool parse_cell(const std::string& cell, double* out) {
  const char* p = cell.c_str();
  char* end = nullptr;
  const double v = std::strtod(p, &end);
  if (end == p) return false;
  while (*end == ' ' || *end == '\t') ++end;
  if (*end != '\0') return false;
  if (!std::isfinite(v)) return false;
  *out = v;
  return true;
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    std::string cell = line.substr(start, comma == std::string::npos
                                              ? std::string::npos
                                              : comma - start);
    const std::size_t a = cell.find_first_not_of(" \t");
    const std::size_t b = cell.find_last_not_of(" \t");
    cells.push_back(a == std::string::npos ? std::string() : cell.substr(a, b - a + 1));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

}  // namespace

Mat read_csv(const std::string& path) {
  const std::string text = read_file(path);

  std::vector<std::vector<double>> rows;
  std::size_t n_cols = 0;
  std::size_t line_no = 0;
  bool saw_first = false;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t nl = text.find('\n', start);
    std::string line = text.substr(
        start, nl == std::string::npos ? std::string::npos : nl - start);
    start = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;

    std::vector<std::string> cells = split_cells(line);
    std::vector<double> vals(cells.size(), 0.0);
    std::size_t bad_col = 0;
    bool ok = true;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!parse_cell(cells[c], &vals[c])) {
        ok = false;
        bad_col = c;
        break;
      }
    }
    if (!saw_first) {
      saw_first = true;
      if (!ok) continue;  // header line
      n_cols = cells.size();
    } else if (!ok) {
      throw IoError(path + " line " + std::to_string(line_no) + " column " +
                    std::to_string(bad_col + 1) + ": '" + cells[bad_col] +
                    "' is not numeric");
    }
    if (n_cols == 0) n_cols = cells.size();
    if (cells.size() != n_cols) {
      throw IoError(path + " line " + std::to_string(line_no) + " has " +
                    std::to_string(cells.size()) + " cells, expected " +
                    std::to_string(n_cols));
    }
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw IoError(path + " has no data rows");

  Mat out(rows.size(), n_cols, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < n_cols; ++c) out.at(i, c) = rows[i][c];
  }
  return out;
}

Dataset load_csv_standardize(const std::string& path, double val_fraction,
                             double test_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0) || !(test_fraction >= 0.0) ||
      val_fraction + test_fraction >= 1.0) {
    throw ConfigError("split fractions must be >= 0 and sum to less than 1");
  }
  const Mat raw = read_csv(path);
  const std::size_t N = raw.rows();
  const std::size_t n_cols = raw.cols();
  std::vector<std::size_t> order(N);
  for (std::size_t i = 0; i < N; ++i) order[i] = i;
  if (val_fraction > 0.0 || test_fraction > 0.0) {
    Rng rng(seed);
    for (std::size_t i = N - 1; i > 0; --i) {
      std::swap(order[i], order[rng.below(i + 1)]);
    }
  }

  Dataset ds;
  ds.points = Mat(N, n_cols, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t c = 0; c < n_cols; ++c) ds.points.at(i, c) = raw.at(order[i], c);
  }
  ds.tag = "csv:" + path;
  apply_split(ds, val_fraction, test_fraction);

  // train-split statistics only; population std
  ds.shift.assign(n_cols, 0.0);
  ds.scale.assign(n_cols, 0.0);
  for (std::size_t c = 0; c < n_cols; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < ds.n_train; ++i) mean += ds.points.at(i, c);
    mean /= static_cast<double>(ds.n_train);
    double var = 0.0;
    for (std::size_t i = 0; i < ds.n_train; ++i) {
      const double d = ds.points.at(i, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(ds.n_train);
    const double sd = std::sqrt(var);
    if (sd < 1e-12 * std::max(1.0, std::fabs(mean))) {
      throw IoError(path + " column " + std::to_string(c + 1) +
                    " has zero variance in the training split");
    }
    ds.shift[c] = mean;
    ds.scale[c] = sd;
    for (std::size_t i = 0; i < N; ++i) {
      ds.points.at(i, c) = (ds.points.at(i, c) - mean) / sd;
    }
  }
  return ds;
}

// ----------------------------------------------------------- histograms

Mat histogram2d(const Mat& pts, std::size_t bins) {
  if (pts.cols() != 2) throw NumericError("histogram2d needs [N,2] points");
  if (bins < 1) throw ConfigError("bins must be >= 1");
  Mat h(bins, bins, 0.0);
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    const double x = pts.at(i, 0), y = pts.at(i, 1);
    if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0)) {
      throw NumericError("histogram2d: row " + std::to_string(i) +
                         " is outside [0,1]^2");
    }
    const std::size_t ix =
        std::min(static_cast<std::size_t>(x * static_cast<double>(bins)), bins - 1);
    const std::size_t iy =
        std::min(static_cast<std::size_t>(y * static_cast<double>(bins)), bins - 1);
    h.at(iy, ix) += 1.0;
  }
  return h;
}

// ----------------------------------------------------------------- PGM

Mat read_pgm(const std::string& path) {
  const std::string s = read_file(path);
  if (s.size() < 2 || s[0] != 'P' || s[1] != '5') {
    throw IoError("'" + path + "' is not a binary PGM (P5) file");
  }
  std::size_t pos = 2;
  auto next_int = [&]() -> long long {
    for (;;) {
      if (pos >= s.size()) throw IoError("'" + path + "': PGM header is truncated");
      const char ch = s[pos];
      if (ch == '#') {
        while (pos < s.size() && s[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        ++pos;
      } else {
        break;
      }
    }
    if (!std::isdigit(static_cast<unsigned char>(s[pos]))) {
      throw IoError("'" + path + "': malformed PGM header");
    }
    long long v = 0;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
      v = v * 10 + (s[pos] - '0');
      if (v > 1000000000) throw IoError("'" + path + "': PGM header value too large");
      ++pos;
    }
    return v;
  };
  const long long w = next_int();
  const long long h = next_int();
  const long long maxval = next_int();
  if (w < 1 || h < 1) throw IoError("'" + path + "': bad PGM dimensions");
  if (maxval < 1 || maxval > 65535) {
    throw IoError("'" + path + "': PGM maxval out of range");
  }
  if (pos >= s.size() || !std::isspace(static_cast<unsigned char>(s[pos]))) {
    throw IoError("'" + path + "': malformed PGM header");
  }
  ++pos;  // single whitespace byte before the pixel data

  const std::size_t W = static_cast<std::size_t>(w), H = static_cast<std::size_t>(h);
  const std::size_t bytes_per = maxval < 256 ? 1 : 2;
  if (s.size() - pos < W * H * bytes_per) {
    throw IoError("'" + path + "': PGM pixel data is truncated");
  }
  Mat img(H, W, 0.0);
  for (std::size_t k = 0; k < W * H; ++k) {
    double v;
    if (bytes_per == 1) {
      v = static_cast<double>(static_cast<unsigned char>(s[pos + k]));
    } else {
      const auto hi = static_cast<unsigned char>(s[pos + 2 * k]);
      const auto lo = static_cast<unsigned char>(s[pos + 2 * k + 1]);
      v = static_cast<double>((static_cast<unsigned>(hi) << 8) | lo);  // big-endian
    }
    img.data()[k] = v;
  }
  return img;
}

void write_pgm(const std::string& path, const Mat& image) {
  if (image.rows() == 0 || image.cols() == 0) {
    throw NumericError("write_pgm: empty image");
  }
  double vmax = 0.0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = image.data()[i];
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw NumericError("write_pgm: intensities must be finite and nonnegative");
    }
    vmax = std::max(vmax, v);
  }
  const double scale = vmax > 0.0 ? 65535.0 / vmax : 0.0;

  std::string out = "P5\n" + std::to_string(image.cols()) + " " +
                    std::to_string(image.rows()) + "\n65535\n";
  out.reserve(out.size() + image.size() * 2);
  for (std::size_t i = 0; i < image.size(); ++i) {
    auto q = static_cast<long>(std::llround(image.data()[i] * scale));
    q = std::clamp(q, 0L, 65535L);
    out.push_back(static_cast<char>((q >> 8) & 0xff));
    out.push_back(static_cast<char>(q & 0xff));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw IoError("failed while writing '" + path + "'");
}

void write_grid_csv(const std::string& path, const Mat& grid) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  char buf[40];
  for (std::size_t r = grid.rows(); r-- > 0;) {  // top row first
    for (std::size_t c = 0; c < grid.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", grid.at(r, c));
      if (c) f << ',';
      f << buf;
    }
    f << '\n';
  }
  f.flush();
  if (!f) throw IoError("failed while writing '" + path + "'");
}

void write_grid_pgm(const std::string& path, const Mat& grid) {
  Mat img(grid.rows(), grid.cols(), 0.0);
  for (std::size_t r = 0; r < grid.rows(); ++r) {
    for (std::size_t c = 0; c < grid.cols(); ++c) {
      img.at(grid.rows() - 1 - r, c) = grid.at(r, c);
    }
  }
  write_pgm(path, img);
}

}  // namespace splineflow::data
