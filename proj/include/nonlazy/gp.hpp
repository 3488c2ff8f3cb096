#pragma once

// Deep NNGP kernel recursions (linear, erf-sigmoid, ReLU closed forms) and
// the ridgeless GP predictor/variance used as the lazy-limit baseline.

#include "nonlazy/dataset.hpp"
#include "nonlazy/numerics.hpp"

#include <vector>

namespace nonlazy {

struct GPKernel {
  Nonlinearity nonlinearity = Nonlinearity::Linear;
  int depth = 1;
  std::vector<double> sigma_l2;  // per-layer prior variances, defaults to 1

  double sigma2(int l) const {
    return sigma_l2.empty() ? 1.0 : sigma_l2.at(l);
  }
};

// Layerwise pair recursion K_l(x1,x2) = <phi(z1) phi(z2)> with (z1, z2)
// centered Gaussian of covariance sigma_l^2 K_{l-1}. Arguments are the
// depth-0 values kappa0(x1,x1), kappa0(x1,x2), kappa0(x2,x2).
double gp_pair_kernel(const GPKernel& k, double k11, double k12, double k22);

// Gram matrix on the dataset's training inputs.
Matrix gp_gram(const GPKernel& k, const Dataset& d);

// k_GP(x) blocks between training inputs and test columns.
Matrix gp_cross(const GPKernel& k, const Dataset& d, const Matrix& x_test);

struct GpPrediction {
  Matrix mean;      // P* x m
  Vector variance;  // P*, class independent
};

// Ridgeless GP predictor; Cholesky with escalating jitter on failure.
GpPrediction gp_predict(const GPKernel& k, const Dataset& d, const Matrix& x_test);

struct GpErrors {
  Vector total;     // per class: bias + variance
  Vector bias;      // squared error of the mean predictor
  Vector variance;  // posterior variance contribution (same for all classes)
};

GpErrors gp_generalization_error(const GPKernel& k, const Dataset& d,
                                 const Matrix& x_test, const Matrix& y_test);

}  // namespace nonlazy
