#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splineflow/mat.hpp"

// Dataset generation and ingestion: the 225-Gaussian grid, image-derived
// densities, standardized CSV loading, and histogram / grid emission.

namespace splineflow::data {

struct Dataset {
  Mat points;  // [N, D], rows ordered train | val | test
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  std::string tag;
  std::vector<double> shift, scale;  // standardization affine (empty if none)

  std::size_t rows() const { return points.rows(); }
  Mat train() const;
  Mat val() const;
  Mat test() const;

  // x_original = x_standardized * scale + shift
  Mat destandardize(const Mat& pts) const;
  // subtract from standardized-units log-likelihoods to state them in
  // original units
  double std_log_correction() const;
};

// Contiguous split of rows (assumed i.i.d.) into train | val | test.
void apply_split(Dataset& ds, double val_fraction, double test_fraction);

inline constexpr int kGridSide = 15;
inline constexpr int kGridComponents = kGridSide * kGridSide;
inline constexpr double kGridSigma = 0.006;
inline constexpr double kGridLo = 0.05;
inline constexpr double kGridHi = 0.95;

// Equal-weight mixture of 225 isotropic Gaussians on a 15x15 grid inside the
// unit square, plus its exact log-density.
Dataset gaussian_grid(std::size_t n, std::uint64_t seed, double sigma = kGridSigma);
double gaussian_grid_log_density(double x, double y, double sigma = kGridSigma);
Mat gaussian_grid_log_density(const Mat& pts, double sigma = kGridSigma);

// Grayscale intensity grid; row 0 is the top of the image, and sampling maps
// that row to y near 1 so renders keep the source orientation.
struct ImageDensity {
  Mat intensity;  // [H, W]
  double total = 0.0;

  static ImageDensity from_grid(Mat image);
  static ImageDensity from_pgm(const std::string& path);
};

Dataset image_density_sample(const ImageDensity& img, std::size_t n,
                             std::uint64_t seed);
double image_density_log_density(const ImageDensity& img, double x, double y);
Mat image_density_log_density(const ImageDensity& img, const Mat& pts);

// Rectangular numeric CSV (optional header), parsed as-is in file order.
Mat read_csv(const std::string& path);

// Same format, but columns are standardized to zero mean and unit population
// variance using train-split statistics only. Rows are shuffled (seeded)
// before splitting; with both fractions 0 the file order is kept.
Dataset load_csv_standardize(const std::string& path, double val_fraction,
                             double test_fraction, std::uint64_t seed);

// Counts on a bins x bins grid over [0,1]^2; cell index floor(p * bins), the
// top edge closed. Row index is the y bin counted from the bottom.
Mat histogram2d(const Mat& pts, std::size_t bins);

// Binary PGM (P5), 8- or 16-bit. Matrices use image orientation: row 0 = top.
Mat read_pgm(const std::string& path);
// 16-bit P5, linearly scaled so the brightest cell maps to 65535.
void write_pgm(const std::string& path, const Mat& image);

// Grid emitters take math orientation (row = y bin from the bottom) and
// write the top row first so files render the right way up.
void write_grid_csv(const std::string& path, const Mat& grid);
void write_grid_pgm(const std::string& path, const Mat& grid);

}  // namespace splineflow::data
