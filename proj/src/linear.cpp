#include "nonlazy/linear.hpp"

#include "nonlazy/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace nonlazy {

double LinearSolution::hidden_prod(int upto) const {
  double prod = 1.0;
  for (int l = 0; l < upto; ++l) prod *= sigma_l2[l];
  return prod;
}

namespace {

// Strength sigma_a^{2(L-l)} / prod_{l' > l} sigma_l'^2 and exponent L-l+1 of
// the learned part in layer l.
double learned_strength(const LinearSolution& sol, int l) {
  double tail = 1.0;
  for (int lp = l; lp < sol.depth; ++lp) tail *= sol.sigma_l2[lp];
  return std::pow(sol.sigma_a2, sol.depth - l) / tail;
}

Matrix matrix_power(const Matrix& m, int k) {
  Matrix out = Matrix::Identity(m.rows(), m.cols());
  for (int i = 0; i < k; ++i) out = out * m;
  return out;
}

}  // namespace

LinearSolution solve_readout_covariance(const Dataset& d, int depth,
                                        double sigma_a2,
                                        std::vector<double> sigma_l2) {
  if (depth < 1) throw std::invalid_argument("depth must be >= 1");
  if (sigma_l2.empty()) sigma_l2.assign(depth, 1.0);
  if (static_cast<int>(sigma_l2.size()) != depth) {
    throw std::invalid_argument("sigma_l2 must have one entry per layer");
  }
  LinearSolution sol;
  sol.depth = depth;
  sol.sigma_a2 = sigma_a2 > 0.0 ? sigma_a2 : std::pow(double(d.p), -1.0 / depth);
  sol.sigma_l2 = std::move(sigma_l2);
  sol.data = d;
  sol.K0 = d.input_kernel();
  sol.K0_pinv = pseudo_inverse(sol.K0, sol.rank_tol);

  // Large-P limit U^{L+1} = (sigma_a^{2L} / prod sigma_l^2) Y^T K0^+ Y.
  const double coeff = std::pow(sol.sigma_a2, depth) / sol.hidden_prod(depth);
  const Matrix rhs = coeff * symmetrize(d.Y.transpose() * sol.K0_pinv * d.Y);
  sol.U = matrix_root(rhs, depth + 1);
  return sol;
}

std::vector<Matrix> training_kernels(const LinearSolution& sol) {
  const Matrix u_inv = pseudo_inverse(sol.U, sol.rank_tol);
  const Matrix& y = sol.data.Y;
  std::vector<Matrix> kernels;
  kernels.reserve(sol.depth);
  for (int l = 1; l <= sol.depth; ++l) {
    const Matrix u_pow = matrix_power(u_inv, sol.depth - l + 1);
    kernels.push_back(sol.hidden_prod(l) * sol.K0 +
                      learned_strength(sol, l) *
                          symmetrize(y * u_pow * y.transpose()));
  }
  return kernels;
}

Matrix mean_predictor(const LinearSolution& sol, const Matrix& x_test) {
  const Matrix k0 = sol.data.k0_block(x_test);  // p x p_test
  return (sol.data.Y.transpose() * (sol.K0_pinv * k0)).transpose();
}

std::vector<double> test_kernels(const LinearSolution& sol, const Vector& x1,
                                 const Vector& x2) {
  const Vector f1 = sol.data.Y.transpose() * (sol.K0_pinv * sol.data.k0(x1));
  const Vector f2 = sol.data.Y.transpose() * (sol.K0_pinv * sol.data.k0(x2));
  const double kap0 = x1.dot(x2) / sol.data.n0;
  const Matrix u_inv = pseudo_inverse(sol.U, sol.rank_tol);

  std::vector<double> out;
  out.reserve(sol.depth);
  for (int l = 1; l <= sol.depth; ++l) {
    const Matrix u_pow = matrix_power(u_inv, sol.depth - l + 1);
    out.push_back(sol.hidden_prod(l) * kap0 +
                  learned_strength(sol, l) * f1.dot(u_pow * f2));
  }
  return out;
}

Matrix predictor_variance(const LinearSolution& sol, const Vector& x, int width) {
  if (width <= 0) throw std::invalid_argument("width must be positive");
  const Vector k0 = sol.data.k0(x);
  const double gap = sol.data.kappa0(x) - k0.dot(sol.K0_pinv * k0);
  const double scale = sol.sigma_a2 * sol.hidden_prod(sol.depth) / width;
  return scale * gap * matrix_power(sol.U, sol.depth);
}

Matrix sample_readout(const LinearSolution& sol, int count, std::uint64_t seed) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sol.U);
  if (eig.eigenvalues().minCoeff() < -1e-12) {
    throw std::domain_error("sample_readout: U must be positive semidefinite");
  }
  const Matrix half =
      eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  Rng rng(seed);
  const int m = static_cast<int>(sol.U.rows());
  Matrix draws(count, m);
  Vector z(m);
  for (int i = 0; i < count; ++i) {
    for (int r = 0; r < m; ++r) z[r] = rng.normal();
    draws.row(i) = (half * z).transpose();
  }
  return draws;
}

}  // namespace nonlazy
