#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "splineflow/data.hpp"
#include "splineflow/errors.hpp"
#include "splineflow/rng.hpp"

using namespace splineflow;
using data::Dataset;
using data::ImageDensity;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  REQUIRE(bool(f));
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

double normal_cdf(double z) { return 0.5 * (1.0 + std::erf(z / std::sqrt(2.0))); }

}  // namespace

// ------------------------------------------------------------ 225-Gaussian

TEST_CASE("grid mixture has 15x15 = 225 components") {
  CHECK(data::kGridComponents == 225);
  CHECK(data::kGridSide * data::kGridSide == data::kGridComponents);
}

TEST_CASE("grid samples average to the center of the square") {
  Dataset ds = data::gaussian_grid(1000000, 2024);
  CHECK(ds.rows() == 1000000);
  CHECK(ds.n_train == 1000000);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    mx += ds.points.at(i, 0);
    my += ds.points.at(i, 1);
  }
  mx /= 1e6;
  my /= 1e6;
  // mixture std is 0.278, so three standard errors is 8.4e-4
  CHECK(std::fabs(mx - 0.5) < 8.4e-4);
  CHECK(std::fabs(my - 0.5) < 8.4e-4);

  Dataset again = data::gaussian_grid(1000, 7);
  Dataset same = data::gaussian_grid(1000, 7);
  for (std::size_t i = 0; i < again.points.size(); ++i) {
    CHECK(again.points.data()[i] == same.points.data()[i]);
  }
}

TEST_CASE("zero-sigma grid samples sit exactly on the grid points") {
  Dataset ds = data::gaussian_grid(3000, 5, 0.0);
  const double step = (data::kGridHi - data::kGridLo) / (data::kGridSide - 1);
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    for (int d = 0; d < 2; ++d) {
      const double v = ds.points.at(i, d);
      const double k = (v - data::kGridLo) / step;
      CHECK(std::fabs(k - std::round(k)) < 1e-12);
      CHECK(v >= data::kGridLo);
      CHECK(v <= data::kGridHi);
    }
  }
}

TEST_CASE("grid oracle density integrates to one") {
  // midpoint rule; at h = 1/400 = sigma/2.4 the lattice sum of a Gaussian is
  // exact to far below the tolerance
  const std::size_t n = 400;
  const double h = 1.0 / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t iy = 0; iy < n; ++iy) {
    for (std::size_t ix = 0; ix < n; ++ix) {
      const double x = (static_cast<double>(ix) + 0.5) * h;
      const double y = (static_cast<double>(iy) + 0.5) * h;
      acc += std::exp(data::gaussian_grid_log_density(x, y)) * h * h;
    }
  }
  CHECK(acc == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(acc == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("grid oracle mass over a rectangle matches the erf formula") {
  // rectangle with corners on component midlines, covering 1 x 2 components
  const double s = (data::kGridHi - data::kGridLo) / (data::kGridSide - 1);
  const double x0 = data::kGridLo + 0.5 * s, x1 = data::kGridLo + 1.5 * s;
  const double y0 = data::kGridLo + 0.5 * s, y1 = data::kGridLo + 2.5 * s;

  double want = 0.0;  // independent route: product of normal CDF differences
  for (int c = 0; c < data::kGridComponents; ++c) {
    const double mx =
        data::kGridLo + s * static_cast<double>(c / data::kGridSide);
    const double my =
        data::kGridLo + s * static_cast<double>(c % data::kGridSide);
    const double px = normal_cdf((x1 - mx) / data::kGridSigma) -
                      normal_cdf((x0 - mx) / data::kGridSigma);
    const double py = normal_cdf((y1 - my) / data::kGridSigma) -
                      normal_cdf((y0 - my) / data::kGridSigma);
    want += px * py / data::kGridComponents;
  }
  CHECK(want == doctest::Approx(2.0 / 225.0).epsilon(1e-6));

  const std::size_t nx = 64, ny = 128;
  const double hx = (x1 - x0) / nx, hy = (y1 - y0) / ny;
  double got = 0.0;
  for (std::size_t iy = 0; iy < ny; ++iy) {
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const double x = x0 + (static_cast<double>(ix) + 0.5) * hx;
      const double y = y0 + (static_cast<double>(iy) + 0.5) * hy;
      got += std::exp(data::gaussian_grid_log_density(x, y)) * hx * hy;
    }
  }
  CHECK(got == doctest::Approx(want).epsilon(1e-7));
}

// ------------------------------------------------------------ image density

TEST_CASE("uniform image samples are uniform (chi-squared at 1%)") {
  ImageDensity img = ImageDensity::from_grid(Mat(4, 4, 1.0));
  Dataset ds = data::image_density_sample(img, 100000, 11);
  Mat h = data::histogram2d(ds.points, 10);
  const double expected = 100000.0 / 100.0;
  double chi2 = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double d = h.data()[i] - expected;
    chi2 += d * d / expected;
  }
  CHECK(chi2 < 134.64);  // 1% critical value, 99 degrees of freedom
}

TEST_CASE("single nonzero pixel confines samples to its cell") {
  Mat image(3, 5, 0.0);
  image.at(1, 2) = 4.0;
  ImageDensity img = ImageDensity::from_grid(std::move(image));
  Dataset ds = data::image_density_sample(img, 2000, 3);
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    CHECK(ds.points.at(i, 0) >= 0.4);
    CHECK(ds.points.at(i, 0) < 0.6);
    // image row 1 of 3 is the middle band of y
    CHECK(ds.points.at(i, 1) >= 1.0 / 3.0);
    CHECK(ds.points.at(i, 1) < 2.0 / 3.0);
  }
}

TEST_CASE("top image row maps to y near one") {
  Mat image(3, 2, 0.0);
  image.at(0, 0) = 1.0;
  ImageDensity img = ImageDensity::from_grid(std::move(image));
  Dataset ds = data::image_density_sample(img, 500, 9);
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    CHECK(ds.points.at(i, 1) >= 2.0 / 3.0);
    CHECK(ds.points.at(i, 1) < 1.0);
    CHECK(ds.points.at(i, 0) < 0.5);
  }
}

TEST_CASE("two-pixel image respects the intensity ratio") {
  Mat image(1, 2, 0.0);
  image.at(0, 0) = 1.0;
  image.at(0, 1) = 3.0;
  ImageDensity img = ImageDensity::from_grid(std::move(image));
  Dataset ds = data::image_density_sample(img, 100000, 13);
  std::size_t right = 0;
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    if (ds.points.at(i, 0) >= 0.5) ++right;
  }
  // binomial p = 0.75: three sigma is 411
  CHECK(std::llabs(static_cast<long long>(right) - 75000) < 411);

  // piecewise-constant oracle: densities 0.5 and 1.5
  CHECK(data::image_density_log_density(img, 0.1, 0.5) ==
        doctest::Approx(std::log(0.5)).epsilon(1e-12));
  CHECK(data::image_density_log_density(img, 0.9, 0.5) ==
        doctest::Approx(std::log(1.5)).epsilon(1e-12));
}

TEST_CASE("image oracle is exactly normalized on an aligned grid") {
  Rng rng(17);
  Mat image(4, 4, 0.0);
  for (std::size_t i = 0; i < image.size(); ++i) image.data()[i] = rng.uniform(0.0, 5.0);
  ImageDensity img = ImageDensity::from_grid(std::move(image));
  const std::size_t n = 512;
  const double h = 1.0 / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t iy = 0; iy < n; ++iy) {
    for (std::size_t ix = 0; ix < n; ++ix) {
      const double x = (static_cast<double>(ix) + 0.5) * h;
      const double y = (static_cast<double>(iy) + 0.5) * h;
      acc += std::exp(data::image_density_log_density(img, x, y)) * h * h;
    }
  }
  CHECK(acc == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("degenerate images are rejected") {
  CHECK_THROWS_WITH_AS(ImageDensity::from_grid(Mat(3, 3, 0.0)),
                       doctest::Contains("all zero"), NumericError);
  Mat neg(2, 2, 1.0);
  neg.at(0, 1) = -0.5;
  CHECK_THROWS_WITH_AS(ImageDensity::from_grid(std::move(neg)),
                       doctest::Contains("nonnegative"), NumericError);
  CHECK_THROWS_AS(ImageDensity::from_grid(Mat()), NumericError);
}

// ----------------------------------------------------------------- CSV

TEST_CASE("csv standardization matches the hand computation") {
  const std::string path = "data_test_basic.csv";
  write_text(path, "a,b\n1,10\n2,20\n3,30\n");
  Dataset ds = data::load_csv_standardize(path, 0.0, 0.0, 1);
  REQUIRE(ds.rows() == 3);
  REQUIRE(ds.points.cols() == 2);
  CHECK(ds.n_train == 3);
  // population std of (1,2,3) is sqrt(2/3)
  CHECK(ds.points.at(0, 0) == doctest::Approx(-1.224745).epsilon(1e-6));
  CHECK(ds.points.at(1, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ds.points.at(2, 0) == doctest::Approx(std::sqrt(1.5)).epsilon(1e-12));
  CHECK(ds.shift[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(ds.shift[1] == doctest::Approx(20.0).epsilon(1e-15));
  CHECK(ds.scale[0] == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));

  Mat back = ds.destandardize(ds.points);
  CHECK(back.at(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(back.at(2, 1) == doctest::Approx(30.0).epsilon(1e-10));
  std::remove(path.c_str());
}

TEST_CASE("csv log-lik unit correction for stds (2,2)") {
  const std::string path = "data_test_correction.csv";
  write_text(path, "0,0\n4,4\n");
  Dataset ds = data::load_csv_standardize(path, 0.0, 0.0, 1);
  CHECK(ds.scale[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(ds.std_log_correction() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(ds.std_log_correction() == doctest::Approx(1.386294).epsilon(1e-6));
  std::remove(path.c_str());
}

TEST_CASE("standardization is idempotent") {
  const std::string path1 = "data_test_idem1.csv";
  const std::string path2 = "data_test_idem2.csv";
  write_text(path1, "1,5\n2,9\n4,2\n7,6\n");
  Dataset first = data::load_csv_standardize(path1, 0.0, 0.0, 1);
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < first.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", first.points.at(i, 0),
                  first.points.at(i, 1));
    out += buf;
  }
  write_text(path2, out);
  Dataset second = data::load_csv_standardize(path2, 0.0, 0.0, 1);
  for (std::size_t i = 0; i < first.points.size(); ++i) {
    CHECK(second.points.data()[i] ==
          doctest::Approx(first.points.data()[i]).epsilon(1e-12));
  }
  std::remove(path1.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("csv splits shuffle but preserve the multiset of rows") {
  const std::string path = "data_test_split.csv";
  std::string text;
  for (int i = 0; i < 10; ++i) text += std::to_string(i) + "\n";
  write_text(path, text);
  Dataset ds = data::load_csv_standardize(path, 0.2, 0.3, 42);
  CHECK(ds.n_train == 5);
  CHECK(ds.n_val == 2);
  CHECK(ds.n_test == 3);
  CHECK(ds.train().rows() == 5);
  CHECK(ds.val().rows() == 2);
  CHECK(ds.test().rows() == 3);

  std::multiset<long> seen;
  Mat orig = ds.destandardize(ds.points);
  for (std::size_t i = 0; i < 10; ++i) {
    seen.insert(std::lround(orig.at(i, 0)));
  }
  std::multiset<long> want{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  CHECK(seen == want);

  Dataset same = data::load_csv_standardize(path, 0.2, 0.3, 42);
  bool identical = true;
  for (std::size_t i = 0; i < ds.points.size(); ++i) {
    identical = identical && ds.points.data()[i] == same.points.data()[i];
  }
  CHECK(identical);
  std::remove(path.c_str());
}

TEST_CASE("csv loader reports malformed input with positions") {
  const std::string path = "data_test_bad.csv";
  write_text(path, "1,2\n3\n");
  CHECK_THROWS_WITH_AS(data::load_csv_standardize(path, 0, 0, 1),
                       doctest::Contains("expected 2"), IoError);
  write_text(path, "a,b\n1,2\n3,zap\n");
  CHECK_THROWS_WITH_AS(data::load_csv_standardize(path, 0, 0, 1),
                       doctest::Contains("line 3"), IoError);
  write_text(path, "5,1\n5,2\n5,3\n");
  CHECK_THROWS_WITH_AS(data::load_csv_standardize(path, 0, 0, 1),
                       doctest::Contains("variance"), IoError);
  write_text(path, "header only\n");
  CHECK_THROWS_WITH_AS(data::load_csv_standardize(path, 0, 0, 1),
                       doctest::Contains("no data rows"), IoError);
  write_text(path, "1,2\n3,4\n");
  CHECK_THROWS_AS(data::load_csv_standardize(path, 0.5, 0.5, 1), ConfigError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(data::load_csv_standardize("data_test_missing.csv", 0, 0, 1),
                  IoError);
}

TEST_CASE("csv accepts CRLF and skips blank lines") {
  const std::string path = "data_test_crlf.csv";
  write_text(path, "1,2\r\n\r\n3,4\r\n");
  Dataset ds = data::load_csv_standardize(path, 0.0, 0.0, 1);
  CHECK(ds.rows() == 2);
  std::remove(path.c_str());
}

// ----------------------------------------------------------- histograms

TEST_CASE("histogram2d boundary conventions") {
  Mat pts(3, 2, 0.0);
  pts.at(0, 0) = 0.5;
  pts.at(0, 1) = 0.5;
  pts.at(1, 0) = 0.0;
  pts.at(1, 1) = 0.0;
  pts.at(2, 0) = 1.0;
  pts.at(2, 1) = 1.0;
  Mat h = data::histogram2d(pts, 2);
  CHECK(h.at(1, 1) == 2.0);  // 0.5 goes to the upper cell; 1.0 stays in range
  CHECK(h.at(0, 0) == 1.0);
  double total = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) total += h.data()[i];
  CHECK(total == 3.0);

  Mat bad(1, 2, 1.5);
  CHECK_THROWS_AS(data::histogram2d(bad, 2), NumericError);
}

TEST_CASE("histogram2d of uniform points is flat within binomial noise") {
  Rng rng(23);
  Mat pts(1000000, 2, 0.0);
  for (std::size_t i = 0; i < pts.size(); ++i) pts.data()[i] = rng.uniform();
  Mat h = data::histogram2d(pts, 4);
  for (std::size_t i = 0; i < h.size(); ++i) {
    CHECK(std::fabs(h.data()[i] - 62500.0) < 727.0);  // three sigma binomial
  }
}

// ----------------------------------------------------------------- PGM

TEST_CASE("pgm reader handles 8-bit, 16-bit, and comments") {
  const std::string path = "data_test_img.pgm";
  std::string bytes = "P5\n# a comment\n3 2\n255\n";
  const unsigned char px8[6] = {0, 64, 128, 192, 255, 32};
  bytes.append(reinterpret_cast<const char*>(px8), 6);
  write_text(path, bytes);
  Mat img = data::read_pgm(path);
  REQUIRE(img.rows() == 2);
  REQUIRE(img.cols() == 3);
  CHECK(img.at(0, 0) == 0.0);
  CHECK(img.at(0, 1) == 64.0);
  CHECK(img.at(1, 2) == 32.0);

  std::string wide = "P5 2 1 65535\n";
  const unsigned char px16[4] = {0x01, 0x00, 0xff, 0xff};  // big-endian
  wide.append(reinterpret_cast<const char*>(px16), 4);
  write_text(path, wide);
  Mat img16 = data::read_pgm(path);
  CHECK(img16.at(0, 0) == 256.0);
  CHECK(img16.at(0, 1) == 65535.0);

  write_text(path, "P6\n1 1\n255\nx");
  CHECK_THROWS_WITH_AS(data::read_pgm(path), doctest::Contains("P5"), IoError);
  write_text(path, "P5\n3 2\n255\nab");
  CHECK_THROWS_WITH_AS(data::read_pgm(path), doctest::Contains("truncated"), IoError);
  write_text(path, "P5\n1 1\n70000\nxx");
  CHECK_THROWS_WITH_AS(data::read_pgm(path), doctest::Contains("maxval"), IoError);
  std::remove(path.c_str());
}

TEST_CASE("pgm write/read round trip is linear in intensity") {
  const std::string path = "data_test_rt.pgm";
  Mat img(2, 2, 0.0);
  img.at(0, 1) = 1.0;
  img.at(1, 0) = 2.0;
  img.at(1, 1) = 4.0;
  data::write_pgm(path, img);
  Mat back = data::read_pgm(path);
  CHECK(back.at(0, 0) == 0.0);
  CHECK(back.at(0, 1) == 16384.0);  // 1 * 65535/4 rounded
  CHECK(back.at(1, 0) == 32768.0);
  CHECK(back.at(1, 1) == 65535.0);
  std::remove(path.c_str());
}

TEST_CASE("grid writers put the top row first") {
  Mat grid(2, 2, 0.0);  // math orientation: row 0 = bottom
  grid.at(0, 0) = 1.0;
  grid.at(0, 1) = 2.0;
  grid.at(1, 0) = 3.0;
  grid.at(1, 1) = 4.0;

  const std::string csv = "data_test_grid.csv";
  data::write_grid_csv(csv, grid);
  CHECK(read_bytes(csv) == "3,4\n1,2\n");
  std::remove(csv.c_str());

  const std::string pgm = "data_test_grid.pgm";
  data::write_grid_pgm(pgm, grid);
  Mat img = data::read_pgm(pgm);
  CHECK(img.at(0, 0) == doctest::Approx(3.0 / 4.0 * 65535).epsilon(1e-4));
  CHECK(img.at(1, 1) == doctest::Approx(2.0 / 4.0 * 65535).epsilon(1e-4));
  std::remove(pgm.c_str());
}

// ---------------------------------------------------------------- splits

TEST_CASE("apply_split computes counts and validates fractions") {
  Dataset ds = data::gaussian_grid(1000, 1);
  data::apply_split(ds, 0.1, 0.1);
  CHECK(ds.n_train == 800);
  CHECK(ds.n_val == 100);
  CHECK(ds.n_test == 100);
  CHECK(ds.train().rows() == 800);
  CHECK(ds.test().rows() == 100);
  // views are contiguous slices
  CHECK(ds.val().at(0, 0) == ds.points.at(800, 0));
  CHECK(ds.test().at(0, 1) == ds.points.at(900, 1));

  CHECK_THROWS_AS(data::apply_split(ds, 0.6, 0.5), ConfigError);
  CHECK_THROWS_AS(data::apply_split(ds, -0.1, 0.0), ConfigError);
}
