#pragma once

// Saddle-point solver for single-hidden-layer ReLU networks in the non-lazy
// scaling. The posterior splits into n = O(1) outlier neurons with rescaled
// readouts/preactivations (a_bar_i, z_bar_i) and an exchangeable bulk with a
// common readout a0. The solver smooths phi with a softplus (c = 10) and
// then polishes with the exact ReLU; reported residuals use the exact ReLU.

#include "nonlazy/dataset.hpp"
#include "nonlazy/numerics.hpp"

#include <cstdint>
#include <vector>

namespace nonlazy {

enum class BulkMode { Neglected, Quadrature };

struct ReluOutlier {
  Vector a_bar;  // m, rescaled readout
  Vector z_bar;  // P, rescaled training preactivation
};

struct ReluSolution {
  Matrix t;      // P x m conjugate field
  Vector a0;     // m bulk readout (zero when the bulk is neglected)
  std::vector<ReluOutlier> outliers;
  int n = 0;
  BulkMode bulk_mode = BulkMode::Neglected;
  double temperature = 0.0;
  double sigma1_2 = 1.0;
  double residual = 0.0;           // exact-ReLU full-system residual
  double residual_smoothed = 0.0;  // softplus-system residual at the solution
  bool converged = false;
  int p = 0;
  int m = 0;
};

struct ReluOptions {
  double tol = 1e-10;
  int max_iter = 600;
  int restarts = 4;
  double sigma1_2 = 1.0;
  double softplus_c = 10.0;
};

// Solves the outlier equations a_bar = t^T phi(z_bar)/P and
// z_bar = sigma1^2 K0 (phi'(z_bar) o (t a_bar)) jointly with the target
// equation Y = <phi(z)>_bulk a0^T + sum_i phi(z_bar_i) a_bar_i^T + T t.
// BulkMode::Quadrature needs K0 == I (the bulk conditional factorizes);
// BulkMode::Neglected drops the bulk term and a0.
ReluSolution solve_relu(const Dataset& d, int n_outliers, double temperature,
                        BulkMode bulk_mode, std::uint64_t init_seed,
                        const ReluOptions& opts = {});

// Hypothesis sweep over n in {m-1, m, m+1}; returns the converged solution
// with the smallest exact-ReLU residual (ties resolved toward smaller n).
ReluSolution solve_relu_sweep(const Dataset& d, double temperature,
                              BulkMode bulk_mode, std::uint64_t init_seed,
                              const ReluOptions& opts = {});

// f_r(x) = sum_i a_bar_i^r phi(k0^T K0^+ z_bar_i) + bulk term (when solved
// with the bulk, its test average collapses to a Gaussian expectation).
Vector relu_predictor(const ReluSolution& sol, const Dataset& d, const Vector& x);
Matrix relu_predictor(const ReluSolution& sol, const Dataset& d, const Matrix& x_test);

// Kernel on arbitrary inputs: outlier Gram plus bulk second moment
// (quadrature mode only).
Matrix relu_kernel(const ReluSolution& sol, const Dataset& d, const Matrix& x_eval);

}  // namespace nonlazy
