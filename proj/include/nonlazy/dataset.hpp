#pragma once

// Task construction and dataset ingestion. All tasks are reduced to a common
// Dataset form: inputs X (n0 x p, one column per input), targets Y (p x m,
// one-hot with offsets y_plus/y_minus), and integer class labels.

#include "nonlazy/numerics.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nonlazy {

struct Dataset {
  Matrix X;                 // n0 x p
  Matrix Y;                 // p x m
  std::vector<int> labels;  // length p, values in [0, m)
  int n0 = 0;
  int p = 0;
  int m = 0;
  double y_plus = 1.0;
  double y_minus = 0.0;

  // Input kernel K0 = X^T X / n0 (p x p).
  Matrix input_kernel() const;
  // k0(x) = X^T x / n0 for a single test input.
  Vector k0(const Vector& x) const;
  double kappa0(const Vector& x) const { return x.squaredNorm() / n0; }
  // Train/test cross kernel X^T X_test / n0 (p x p_test).
  Matrix k0_block(const Matrix& x_test) const;

  // FNV-1a over dimensions, labels, and raw floats; identifies the dataset
  // across pipeline stages.
  std::uint64_t content_hash() const;
};

// Targets from labels: Y(mu, r) = y_plus if labels[mu] == r else y_minus.
Matrix one_hot_targets(const std::vector<int>& labels, int m, double y_plus,
                       double y_minus);

enum class LabelAssignment { FixedRatio, Iid };

// Toy task: p mutually orthogonal inputs in R^{n0} with (1/n0) x^T x = delta,
// built from the QR frame of a seeded Gaussian matrix scaled by sqrt(n0).
// Under FixedRatio the class counts follow largest-remainder rounding of
// p * ratios; under Iid each label is an independent categorical draw.
Dataset make_toy_task(int p, int n0, int m, const std::vector<double>& ratios,
                      LabelAssignment assignment, double y_plus, double y_minus,
                      std::uint64_t seed);

// Largest-remainder apportionment of p among the ratios.
std::vector<int> fixed_ratio_counts(int p, const std::vector<double>& ratios);

enum class FileFormat { Idx, Csv };

// Loads the first `count` inputs (file order) whose labels fall in `classes`;
// labels are remapped to 0..m-1 in ascending original order. For Idx, `path`
// is the images file and the labels file is the conventional sibling
// (images-idx3 -> labels-idx1); for Csv the file has a "label,pix..." header.
Dataset load_dataset(const std::string& path, FileFormat format,
                     const std::vector<int>& classes, int count, double y_plus,
                     double y_minus);

// Per-input preprocessing: subtract each column's mean, then rescale so the
// squared norm equals norm_target. Constant inputs are a degenerate-input
// error naming the offending index.
Dataset preprocess(const Dataset& d, double norm_target);

// Project inputs onto a seeded random orthonormal `target_dim`-frame and
// rescale columns back to norm_target (no re-centering; a square orthonormal
// projection leaves K0 unchanged).
Dataset random_project(const Dataset& d, int target_dim, double norm_target,
                       std::uint64_t seed);

// Self-describing binary container (exact round-trip of labels and reals).
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset_container(const std::string& path);

// Errors carry a category used by the CLI for exit codes.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace nonlazy
