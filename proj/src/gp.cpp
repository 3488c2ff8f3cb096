#include "nonlazy/gp.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace nonlazy {

namespace {

double clamp_correlation(double rho) {
  if (rho > 1.0 || rho < -1.0) {
    if (std::abs(rho) > 1.0 + 1e-12) {
      std::cerr << "gp_pair_kernel: correlation " << rho << " clamped to [-1,1]\n";
    }
    return rho > 0.0 ? 1.0 : -1.0;
  }
  return rho;
}

// <relu(z1) relu(z2)> for centered (z1, z2), the arc-cosine kernel:
// sqrt(v11 v22) / (2 pi) [sin th + (pi - th) cos th], cos th = v12/sqrt(v11 v22).
double relu_pair(double v11, double v12, double v22) {
  const double scale = std::sqrt(v11 * v22);
  if (scale <= 0.0) return 0.0;
  const double c = clamp_correlation(v12 / scale);
  const double theta = std::acos(c);
  return scale / (2.0 * M_PI) * (std::sin(theta) + (M_PI - theta) * c);
}

// <phi(z1) phi(z2)> for the erf-sigmoid, adapted arcsine formula:
// 1/4 + arcsin[(pi/2) v12 / sqrt((1 + (pi/2) v11)(1 + (pi/2) v22))] / (2 pi).
double erf_pair(double v11, double v12, double v22) {
  const double h = 0.5 * M_PI;
  const double denom = std::sqrt((1.0 + h * v11) * (1.0 + h * v22));
  const double arg = clamp_correlation(h * v12 / denom);
  return 0.25 + std::asin(arg) / (2.0 * M_PI);
}

}  // namespace

double gp_pair_kernel(const GPKernel& k, double k11, double k12, double k22) {
  double v11 = k11, v12 = k12, v22 = k22;
  for (int l = 0; l < k.depth; ++l) {
    const double s2 = k.sigma2(l);
    const double a11 = s2 * v11, a12 = s2 * v12, a22 = s2 * v22;
    switch (k.nonlinearity) {
      case Nonlinearity::Linear:
        v11 = a11; v12 = a12; v22 = a22;
        break;
      case Nonlinearity::Relu:
        v11 = 0.5 * a11;
        v22 = 0.5 * a22;
        v12 = relu_pair(a11, a12, a22);
        break;
      case Nonlinearity::ErfSigmoid:
        v12 = erf_pair(a11, a12, a22);
        v11 = erf_pair(a11, a11, a11);
        v22 = erf_pair(a22, a22, a22);
        break;
    }
  }
  return v12;
}

Matrix gp_gram(const GPKernel& k, const Dataset& d) {
  const Matrix k0 = d.input_kernel();
  Matrix gram(d.p, d.p);
  for (int i = 0; i < d.p; ++i) {
    for (int j = i; j < d.p; ++j) {
      gram(i, j) = gp_pair_kernel(k, k0(i, i), k0(i, j), k0(j, j));
      gram(j, i) = gram(i, j);
    }
  }
  return gram;
}

Matrix gp_cross(const GPKernel& k, const Dataset& d, const Matrix& x_test) {
  const Matrix k0 = d.input_kernel();
  const Matrix cross0 = d.k0_block(x_test);
  const int pt = static_cast<int>(x_test.cols());
  Matrix cross(d.p, pt);
  for (int j = 0; j < pt; ++j) {
    const double kxx = d.kappa0(x_test.col(j));
    for (int i = 0; i < d.p; ++i) {
      cross(i, j) = gp_pair_kernel(k, k0(i, i), cross0(i, j), kxx);
    }
  }
  return cross;
}

GpPrediction gp_predict(const GPKernel& k, const Dataset& d, const Matrix& x_test) {
  const Matrix gram = gp_gram(k, d);
  const double diag_scale = gram.diagonal().mean();

  Eigen::LLT<Matrix> llt;
  double jitter = 0.0;
  for (double j : {0.0, 1e-12, 1e-10, 1e-8}) {
    Matrix reg = gram;
    reg.diagonal().array() += j * diag_scale;
    llt.compute(reg);
    if (llt.info() == Eigen::Success) {
      jitter = j;
      break;
    }
    jitter = -1.0;
  }
  if (jitter < 0.0) {
    throw std::runtime_error("gp_predict: Cholesky failed at maximum jitter");
  }

  const Matrix cross = gp_cross(k, d, x_test);
  const int pt = static_cast<int>(x_test.cols());

  GpPrediction pred;
  const Matrix alpha = llt.solve(d.Y);      // P x m
  pred.mean = cross.transpose() * alpha;    // P* x m
  pred.variance = Vector(pt);
  const Matrix kinv_cross = llt.solve(cross);
  for (int j = 0; j < pt; ++j) {
    const double kxx = gp_pair_kernel(k, d.kappa0(x_test.col(j)),
                                      d.kappa0(x_test.col(j)),
                                      d.kappa0(x_test.col(j)));
    // Standard posterior variance kappa - k^T K^{-1} k.
    pred.variance[j] = std::max(kxx - cross.col(j).dot(kinv_cross.col(j)), 0.0);
  }
  return pred;
}

GpErrors gp_generalization_error(const GPKernel& k, const Dataset& d,
                                 const Matrix& x_test, const Matrix& y_test) {
  const GpPrediction pred = gp_predict(k, d, x_test);
  const int pt = static_cast<int>(x_test.cols());
  const int m = static_cast<int>(y_test.cols());
  GpErrors err;
  err.bias = Vector::Zero(m);
  err.variance = Vector::Constant(m, pred.variance.mean());
  for (int r = 0; r < m; ++r) {
    err.bias[r] = (y_test.col(r) - pred.mean.col(r)).squaredNorm() / pt;
  }
  err.total = err.bias + err.variance;
  return err;
}

}  // namespace nonlazy
