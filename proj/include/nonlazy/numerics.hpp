#pragma once

// Shared numerical kernels: Gauss-Hermite quadrature, closed-form Gaussian
// expectations of the erf-sigmoid and ReLU nonlinearities, eigenvalue-based
// matrix decompositions, and a damped least-squares solver for
// self-consistency equations.

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>

namespace nonlazy {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Nonlinearities

enum class Nonlinearity { Linear, ErfSigmoid, Relu };

Nonlinearity nonlinearity_from_string(const std::string& s);
std::string to_string(Nonlinearity nl);

// phi(z) = [1 + erf(sqrt(pi) z / 2)] / 2, a sigmoid with phi'(0) = 1/2.
double erf_sigmoid(double z);
// phi'(z) = exp(-pi z^2 / 4) / 2
double erf_sigmoid_deriv(double z);

inline double relu(double z) { return z > 0.0 ? z : 0.0; }
inline double relu_deriv(double z) { return z > 0.0 ? 1.0 : 0.0; }

// Smoothed ReLU log(1 + exp(c z)) / c used inside solvers only.
double softplus(double z, double c);
double softplus_deriv(double z, double c);

double apply_nonlinearity(Nonlinearity nl, double z);
double apply_nonlinearity_deriv(Nonlinearity nl, double z);

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature (physicists' convention: weights sum to sqrt(pi),
// nodes are roots of H_n). Expectations under N(mean, variance) are taken as
// sum_k w_k f(mean + sqrt(2 variance) x_k) / sqrt(pi).

struct QuadratureRule {
  int order = 0;
  Vector nodes;
  Vector weights;

  static QuadratureRule gauss_hermite(int order);
};

// Default order used throughout the solvers; configurable per call site.
inline constexpr int kDefaultQuadOrder = 80;

const QuadratureRule& default_quadrature();

double gauss_hermite_expect(const std::function<double(double)>& f,
                            double mean, double variance,
                            const QuadratureRule& rule);

// <phi(z)> for z ~ N(mu, variance) with phi the erf-sigmoid:
// phi(mu / sqrt(1 + pi variance / 2)).
double gauss_mean_erf(double mu, double variance);

// <max(0, z)> for z ~ N(mu, variance):
// sigma/sqrt(2 pi) exp(-mu^2/(2 sigma^2)) + mu H(-mu/sigma),
// H the standard Gaussian tail probability.
double gauss_mean_relu(double mu, double variance);

// Standard Gaussian tail probability H(u) = P(Z > u).
double gauss_tail(double u);

// <max(0, z)^2> for z ~ N(mu, variance).
double gauss_relu_second_moment(double mu, double variance);

// exp(x^2) erfc(x), stable for large positive x.
double erfcx(double x);

// ---------------------------------------------------------------------------
// Tilted 1-D Gaussian moments used by the saddle-point solvers. The density
// is proportional to N(z | 0, sigma2) exp(g phi(z)).

struct TiltedMoments {
  double log_partition = 0.0;  // log <exp(g phi(z))>_{z ~ N(0, sigma2)}
  double mean_z = 0.0;         // <z>
  double mean_z2 = 0.0;        // <z^2>
  double mean_phi = 0.0;       // <phi(z)>
  double mean_phi2 = 0.0;      // <phi(z)^2>
};

// Quadrature-based, valid for any bounded-growth phi; used for the sigmoid.
TiltedMoments tilted_moments_erf(double g, double sigma2,
                                 const QuadratureRule& rule);

// Closed form for phi = ReLU (tilt exp(g max(0, z)) integrates analytically).
TiltedMoments tilted_moments_relu(double g, double sigma2);

// ---------------------------------------------------------------------------
// Symmetric-matrix helpers

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

bool is_symmetric(const Matrix& m, double tol = 1e-12);

// Asserts min eigenvalue >= -tol * max |eigenvalue|; throws std::domain_error.
void require_psd(const Matrix& m, double tol = 1e-8, const char* what = "matrix");

// Moore-Penrose inverse via eigendecomposition of a symmetric matrix;
// eigenvalues with |lambda| < rank_tol * max|lambda| are treated as zero.
Matrix pseudo_inverse(const Matrix& m, double rank_tol = 1e-10);

// Symmetric PSD k-th root via eigendecomposition; eigenvalues below
// -tol * max are a domain error, small negatives are clamped to zero.
Matrix matrix_root(const Matrix& m, int k, double tol = 1e-9);

// ---------------------------------------------------------------------------
// Self-consistency solver. Minimizes |residual(x)|^2 with a damped
// Gauss-Newton iteration; the Jacobian comes from an analytic callback when
// supplied and central finite differences (step 1e-6 (1 + |x_j|)) otherwise.
// Accepted iterates have strictly non-increasing residual norm.

using ResidualFn = std::function<Vector(const Vector&)>;
using JacobianFn = std::function<Matrix(const Vector&)>;

struct SolveOptions {
  double tol = 1e-10;
  int max_iter = 400;
  double fd_step = 1e-6;
  double lambda_init = 1e-3;
  double lambda_max = 1e14;
  // Observes (iteration, residual norm) at every accepted iterate.
  std::function<void(int, double)> on_accept;
};

struct SolveResult {
  Vector x;
  double residual_norm = 0.0;
  bool converged = false;
  int iterations = 0;
};

SolveResult solve_self_consistent(const ResidualFn& residual, const Vector& init,
                                  const SolveOptions& opts,
                                  const JacobianFn* jacobian = nullptr);

// Spec'd convenience form.
SolveResult solve_self_consistent(const ResidualFn& residual, const Vector& init,
                                  double tol, int max_iter);

Matrix fd_jacobian(const ResidualFn& residual, const Vector& x, double step = 1e-6);

}  // namespace nonlazy
