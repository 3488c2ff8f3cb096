#include "nonlazy/numerics.hpp"

#include <cmath>
#include <mutex>
#include <stdexcept>

namespace nonlazy {

namespace {
constexpr double kSqrtPi = 1.7724538509055160273;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Nonlinearity nonlinearity_from_string(const std::string& s) {
  if (s == "linear") return Nonlinearity::Linear;
  if (s == "erf-sigmoid" || s == "sigmoidal" || s == "erf") return Nonlinearity::ErfSigmoid;
  if (s == "relu") return Nonlinearity::Relu;
  throw std::invalid_argument("unknown nonlinearity: " + s);
}

std::string to_string(Nonlinearity nl) {
  switch (nl) {
    case Nonlinearity::Linear: return "linear";
    case Nonlinearity::ErfSigmoid: return "erf-sigmoid";
    case Nonlinearity::Relu: return "relu";
  }
  return "?";
}

double erf_sigmoid(double z) {
  return 0.5 * (1.0 + std::erf(0.5 * kSqrtPi * z));
}

double erf_sigmoid_deriv(double z) {
  return 0.5 * std::exp(-0.25 * M_PI * z * z);
}

double softplus(double z, double c) {
  const double u = c * z;
  if (u > 30.0) return z;
  if (u < -30.0) return std::exp(u) / c;
  return std::log1p(std::exp(u)) / c;
}

double softplus_deriv(double z, double c) {
  const double u = c * z;
  if (u > 30.0) return 1.0;
  if (u < -30.0) return std::exp(u);
  return 1.0 / (1.0 + std::exp(-u));
}

double apply_nonlinearity(Nonlinearity nl, double z) {
  switch (nl) {
    case Nonlinearity::Linear: return z;
    case Nonlinearity::ErfSigmoid: return erf_sigmoid(z);
    case Nonlinearity::Relu: return relu(z);
  }
  return z;
}

double apply_nonlinearity_deriv(Nonlinearity nl, double z) {
  switch (nl) {
    case Nonlinearity::Linear: return 1.0;
    case Nonlinearity::ErfSigmoid: return erf_sigmoid_deriv(z);
    case Nonlinearity::Relu: return relu_deriv(z);
  }
  return 1.0;
}

// ---------------------------------------------------------------------------

QuadratureRule QuadratureRule::gauss_hermite(int order) {
  if (order < 1) throw std::invalid_argument("quadrature order must be >= 1");
  // Golub-Welsch on the Jacobi matrix of the (physicists') Hermite recurrence:
  // off-diagonal beta_k = sqrt(k / 2), weights = sqrt(pi) v_{0k}^2.
  Matrix jacobi = Matrix::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    const double b = std::sqrt(0.5 * k);
    jacobi(k, k - 1) = b;
    jacobi(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
  QuadratureRule rule;
  rule.order = order;
  rule.nodes = eig.eigenvalues();
  rule.weights = Vector(order);
  for (int k = 0; k < order; ++k) {
    const double v0 = eig.eigenvectors()(0, k);
    rule.weights[k] = kSqrtPi * v0 * v0;
  }
  return rule;
}

const QuadratureRule& default_quadrature() {
  static const QuadratureRule rule = QuadratureRule::gauss_hermite(kDefaultQuadOrder);
  return rule;
}

double gauss_hermite_expect(const std::function<double(double)>& f,
                            double mean, double variance,
                            const QuadratureRule& rule) {
  if (variance < 0.0) throw std::domain_error("gauss_hermite_expect: negative variance");
  const double scale = std::sqrt(2.0 * variance);
  double acc = 0.0;
  for (int k = 0; k < rule.order; ++k) {
    acc += rule.weights[k] * f(mean + scale * rule.nodes[k]);
  }
  return acc / kSqrtPi;
}

double gauss_mean_erf(double mu, double variance) {
  if (variance < 0.0) throw std::domain_error("gauss_mean_erf: negative variance");
  return erf_sigmoid(mu / std::sqrt(1.0 + 0.5 * M_PI * variance));
}

double gauss_tail(double u) { return 0.5 * std::erfc(u / std::sqrt(2.0)); }

double gauss_mean_relu(double mu, double variance) {
  if (variance < 0.0) throw std::domain_error("gauss_mean_relu: negative variance");
  if (variance == 0.0) return relu(mu);
  const double sigma = std::sqrt(variance);
  return sigma * kInvSqrt2Pi * std::exp(-0.5 * mu * mu / variance) +
         mu * gauss_tail(-mu / sigma);
}

double gauss_relu_second_moment(double mu, double variance) {
  if (variance < 0.0) throw std::domain_error("gauss_relu_second_moment: negative variance");
  if (variance == 0.0) {
    const double r = relu(mu);
    return r * r;
  }
  const double sigma = std::sqrt(variance);
  const double u = mu / sigma;
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * u * u);
  return (mu * mu + variance) * gauss_tail(-u) + mu * sigma * pdf;
}

double erfcx(double x) {
  if (x < 15.0) return std::exp(x * x) * std::erfc(x);
  // Asymptotic series 1/(x sqrt(pi)) sum_k (-1)^k (2k-1)!!/(2x^2)^k.
  const double inv2x2 = 1.0 / (2.0 * x * x);
  double term = 1.0, sum = 1.0;
  for (int k = 1; k <= 10; ++k) {
    term *= -(2.0 * k - 1.0) * inv2x2;
    sum += term;
  }
  return sum / (x * kSqrtPi);
}

// ---------------------------------------------------------------------------

TiltedMoments tilted_moments_erf(double g, double sigma2,
                                 const QuadratureRule& rule) {
  if (sigma2 < 0.0) throw std::domain_error("tilted_moments_erf: negative variance");
  const double scale = std::sqrt(2.0 * sigma2);
  // phi in [0,1] so the tilt is bounded by exp(|g|); shift by g/2 for symmetry.
  double z0 = 0.0, z1 = 0.0, z2 = 0.0, zphi = 0.0, zphi2 = 0.0;
  for (int k = 0; k < rule.order; ++k) {
    const double z = scale * rule.nodes[k];
    const double p = erf_sigmoid(z);
    const double w = rule.weights[k] * std::exp(g * (p - 0.5));
    z0 += w;
    z1 += w * z;
    z2 += w * z * z;
    zphi += w * p;
    zphi2 += w * p * p;
  }
  TiltedMoments mom;
  mom.log_partition = std::log(z0 / kSqrtPi) + 0.5 * g;
  mom.mean_z = z1 / z0;
  mom.mean_z2 = z2 / z0;
  mom.mean_phi = zphi / z0;
  mom.mean_phi2 = zphi2 / z0;
  return mom;
}

TiltedMoments tilted_moments_relu(double g, double sigma2) {
  if (sigma2 <= 0.0) throw std::domain_error("tilted_moments_relu: variance must be > 0");
  const double sigma = std::sqrt(sigma2);
  const double u = g * sigma;
  // A = exp(u^2/2) Phi(u), kept finite for very negative u through erfcx.
  const double a = 0.5 * erfcx(-u / std::sqrt(2.0));
  const double z = 0.5 + a;  // partition function <exp(g phi)>
  TiltedMoments mom;
  mom.log_partition = std::log(z);
  const double s1 = sigma * (u * a + kInvSqrt2Pi);
  const double s2 = sigma2 * ((1.0 + u * u) * a + u * kInvSqrt2Pi);
  mom.mean_phi = s1 / z;
  mom.mean_phi2 = s2 / z;
  mom.mean_z = (s1 - sigma * kInvSqrt2Pi) / z;
  mom.mean_z2 = (0.5 * sigma2 + s2) / z;
  return mom;
}

// ---------------------------------------------------------------------------

bool is_symmetric(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * (1.0 + m.cwiseAbs().maxCoeff());
}

void require_psd(const Matrix& m, double tol, const char* what) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(m));
  const double max_abs = eig.eigenvalues().cwiseAbs().maxCoeff();
  if (eig.eigenvalues().minCoeff() < -tol * std::max(max_abs, 1e-300)) {
    throw std::domain_error(std::string(what) + ": not positive semidefinite");
  }
}

Matrix pseudo_inverse(const Matrix& m, double rank_tol) {
  if (m.rows() != m.cols()) throw std::invalid_argument("pseudo_inverse: matrix must be square");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(m));
  const Vector& lam = eig.eigenvalues();
  const double cutoff = rank_tol * lam.cwiseAbs().maxCoeff();
  Vector inv = Vector::Zero(lam.size());
  for (int i = 0; i < lam.size(); ++i) {
    if (std::abs(lam[i]) > cutoff) inv[i] = 1.0 / lam[i];
  }
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

Matrix matrix_root(const Matrix& m, int k, double tol) {
  if (k < 1) throw std::invalid_argument("matrix_root: k must be >= 1");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(m));
  const Vector& lam = eig.eigenvalues();
  const double max_abs = std::max(lam.cwiseAbs().maxCoeff(), 1e-300);
  Vector root(lam.size());
  for (int i = 0; i < lam.size(); ++i) {
    if (lam[i] < -tol * max_abs) {
      throw std::domain_error("matrix_root: negative eigenvalue beyond tolerance");
    }
    root[i] = std::pow(std::max(lam[i], 0.0), 1.0 / k);
  }
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

// ---------------------------------------------------------------------------

Matrix fd_jacobian(const ResidualFn& residual, const Vector& x, double step) {
  const Vector r0 = residual(x);
  Matrix jac(r0.size(), x.size());
  Vector xp = x;
  for (int j = 0; j < x.size(); ++j) {
    const double h = step * (1.0 + std::abs(x[j]));
    xp[j] = x[j] + h;
    const Vector rp = residual(xp);
    xp[j] = x[j] - h;
    const Vector rm = residual(xp);
    xp[j] = x[j];
    jac.col(j) = (rp - rm) / (2.0 * h);
  }
  return jac;
}

SolveResult solve_self_consistent(const ResidualFn& residual, const Vector& init,
                                  const SolveOptions& opts,
                                  const JacobianFn* jacobian) {
  SolveResult res;
  res.x = init;
  Vector r = residual(res.x);
  res.residual_norm = r.norm();
  double lambda = opts.lambda_init;

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    res.iterations = iter;
    if (res.residual_norm <= opts.tol) {
      res.converged = true;
      return res;
    }
    const Matrix jac = jacobian ? (*jacobian)(res.x)
                                : fd_jacobian(residual, res.x, opts.fd_step);
    const Matrix jtj = jac.transpose() * jac;
    const Vector jtr = jac.transpose() * r;
    const Vector diag = jtj.diagonal().cwiseMax(1e-12);

    bool accepted = false;
    while (lambda <= opts.lambda_max) {
      Matrix damped = jtj;
      damped.diagonal() += lambda * diag;
      const Vector dx = damped.ldlt().solve(-jtr);
      const Vector x_new = res.x + dx;
      const Vector r_new = residual(x_new);
      if (r_new.norm() < res.residual_norm) {
        res.x = x_new;
        r = r_new;
        res.residual_norm = r_new.norm();
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        if (opts.on_accept) opts.on_accept(iter, res.residual_norm);
        break;
      }
      lambda *= 5.0;
    }
    if (!accepted) {
      // Damping exhausted: report the best iterate, non-converged.
      res.converged = res.residual_norm <= opts.tol;
      return res;
    }
  }
  res.converged = res.residual_norm <= opts.tol;
  return res;
}

SolveResult solve_self_consistent(const ResidualFn& residual, const Vector& init,
                                  double tol, int max_iter) {
  SolveOptions opts;
  opts.tol = tol;
  opts.max_iter = max_iter;
  return solve_self_consistent(residual, init, opts);
}

}  // namespace nonlazy
