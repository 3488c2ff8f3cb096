#pragma once

// Closed-form zero-temperature posterior for deep linear networks in the
// non-lazy scaling: readout covariance U from U^{L+1} = c Y^T K0^+ Y,
// layerwise train/test kernels, mean predictor, and predictor variance.

#include "nonlazy/dataset.hpp"
#include "nonlazy/numerics.hpp"

#include <cstdint>
#include <vector>

namespace nonlazy {

struct LinearSolution {
  Matrix U;                      // m x m readout covariance, symmetric PD
  int depth = 1;                 // L
  double sigma_a2 = 0.0;         // readout prior variance
  std::vector<double> sigma_l2;  // hidden prior variances, length L
  Dataset data;
  Matrix K0;
  Matrix K0_pinv;
  double rank_tol = 1e-10;

  double hidden_prod(int upto) const;  // prod_{l <= upto} sigma_l2
};

// sigma_a2 <= 0 selects the default P^{-1/L}.
LinearSolution solve_readout_covariance(const Dataset& d, int depth,
                                        double sigma_a2 = 0.0,
                                        std::vector<double> sigma_l2 = {});

// Training kernels K_1..K_L: prior part prod sigma^2 K0 plus the learned
// low-rank part Y U^{-(L-l+1)} Y^T with its depth-dependent strength.
std::vector<Matrix> training_kernels(const LinearSolution& sol);

// Mean predictor f(x) = Y^T K0^+ k0(x) per test column; returns P* x m.
Matrix mean_predictor(const LinearSolution& sol, const Matrix& x_test);

// kappa_1..kappa_L for a pair of test inputs.
std::vector<double> test_kernels(const LinearSolution& sol, const Vector& x1,
                                 const Vector& x2);

// (sigma_a^2 prod sigma_l^2 / N) U^L (kappa0 - k0^T K0^+ k0); zero at
// training inputs.
Matrix predictor_variance(const LinearSolution& sol, const Vector& x, int width);

// i.i.d. draws from N(0, U); rows are samples.
Matrix sample_readout(const LinearSolution& sol, int count, std::uint64_t seed);

}  // namespace nonlazy
