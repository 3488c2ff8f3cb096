#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nonlazy/gp.hpp"
#include "nonlazy/linear.hpp"
#include "nonlazy/rng.hpp"
#include "test_helpers.hpp"

#include <cmath>

using namespace nonlazy;

namespace {

// 2-D quadrature oracle for <phi(z1) phi(z2)> under a centered bivariate
// Gaussian. The erf-sigmoid integrand is smooth (tensor Gauss-Hermite);
// the ReLU one restricts to the positive quadrant (tensor Gauss-Legendre).
double pair_oracle(Nonlinearity nl, double v11, double v12, double v22) {
  const double det = v11 * v22 - v12 * v12;
  REQUIRE(det > 0.0);
  if (nl == Nonlinearity::ErfSigmoid) {
    const QuadratureRule gh = QuadratureRule::gauss_hermite(60);
    // z1 = sqrt(v11) u, z2 = mean + sqrt(cond var) w with u, w independent.
    double acc = 0.0;
    for (int i = 0; i < gh.order; ++i) {
      const double z1 = std::sqrt(2.0 * v11) * gh.nodes[i];
      const double mean2 = v12 / v11 * z1;
      const double var2 = v22 - v12 * v12 / v11;
      double inner = 0.0;
      for (int j = 0; j < gh.order; ++j) {
        const double z2 = mean2 + std::sqrt(2.0 * var2) * gh.nodes[j];
        inner += gh.weights[j] * erf_sigmoid(z2);
      }
      acc += gh.weights[i] * erf_sigmoid(z1) * inner / M_PI;
    }
    return acc;
  }
  const testing_oracles::GaussLegendre gl(240);
  const double r1 = 12.0 * std::sqrt(v11), r2 = 12.0 * std::sqrt(v22);
  const double norm = 1.0 / (2.0 * M_PI * std::sqrt(det));
  const auto inner_fn = [&](double z1) {
    return gl.integrate(
        [&](double z2) {
          const double q = (v22 * z1 * z1 - 2.0 * v12 * z1 * z2 + v11 * z2 * z2) / det;
          return z2 * norm * std::exp(-0.5 * q);
        },
        0.0, r2);
  };
  return gl.integrate([&](double z1) { return z1 * inner_fn(z1); }, 0.0, r1);
}

}  // namespace

TEST_CASE("relu kernel halves the variance at equal inputs") {
  GPKernel k{Nonlinearity::Relu, 1, {1.7}};
  const double v = gp_pair_kernel(k, 2.3, 2.3, 2.3);
  CHECK(v == doctest::Approx(1.7 * 2.3 / 2.0).epsilon(1e-12));
}

TEST_CASE("erf kernel of independent inputs is 1/4") {
  GPKernel k{Nonlinearity::ErfSigmoid, 1, {1.0}};
  CHECK(gp_pair_kernel(k, 1.5, 0.0, 0.9) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("pair kernels match 2-D quadrature on a grid") {
  GPKernel erf_k{Nonlinearity::ErfSigmoid, 1, {1.0}};
  GPKernel relu_k{Nonlinearity::Relu, 1, {1.0}};
  int checked = 0;
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) {
      const double v11 = 0.4 + 1.8 * i / 9.0;
      const double v22 = 0.6 + 1.2 * j / 9.0;
      const double rho = -0.9 + 1.8 * (i * 10 + j) / 99.0;
      const double v12 = rho * std::sqrt(v11 * v22);
      const double erf_got = gp_pair_kernel(erf_k, v11, v12, v22);
      const double erf_want = pair_oracle(Nonlinearity::ErfSigmoid, v11, v12, v22);
      CHECK(std::abs(erf_got - erf_want) < 1e-8);
      const double relu_got = gp_pair_kernel(relu_k, v11, v12, v22);
      const double relu_want = pair_oracle(Nonlinearity::Relu, v11, v12, v22);
      CHECK(std::abs(relu_got - relu_want) < 1e-8);
      ++checked;
    }
  }
  CHECK(checked == 100);
}

TEST_CASE("deep linear recursion reproduces the scaled input kernel") {
  const Dataset d = make_toy_task(6, 8, 2, {0.5, 0.5},
                                  LabelAssignment::FixedRatio, 1.0, 0.0, 3);
  GPKernel k{Nonlinearity::Linear, 1, {2.5}};
  const Matrix gram = gp_gram(k, d);
  CHECK((gram - 2.5 * d.input_kernel()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gp interpolates the training data at zero noise") {
  const Dataset d = make_toy_task(10, 12, 3, {0.5, 0.25, 0.25},
                                  LabelAssignment::FixedRatio, 1.0, -0.5, 9);
  for (Nonlinearity nl :
       {Nonlinearity::Linear, Nonlinearity::ErfSigmoid, Nonlinearity::Relu}) {
    GPKernel k{nl, 1, {1.0}};
    const GpPrediction pred = gp_predict(k, d, d.X);
    CHECK((pred.mean - d.Y).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(pred.variance.cwiseAbs().maxCoeff() < 1e-8);
    CHECK(pred.variance.minCoeff() >= 0.0);
  }
}

TEST_CASE("linear-kernel gp mean equals the non-lazy linear predictor") {
  // The mean predictor of the non-lazy linear theory coincides with the
  // lazy/GP one; check on a non-orthogonal dataset.
  Rng rng(15);
  Dataset d;
  d.n0 = 20;
  d.p = 12;
  d.m = 2;
  d.X = Matrix(20, 12);
  for (int i = 0; i < d.X.size(); ++i) d.X.data()[i] = rng.normal();
  d.labels.resize(12);
  for (int j = 0; j < 12; ++j) d.labels[j] = j % 2;
  d.y_plus = 1.0;
  d.y_minus = 0.0;
  d.Y = one_hot_targets(d.labels, 2, 1.0, 0.0);

  Matrix x_test(20, 5);
  for (int i = 0; i < x_test.size(); ++i) x_test.data()[i] = rng.normal();

  GPKernel k{Nonlinearity::Linear, 1, {1.0}};
  const GpPrediction gp = gp_predict(k, d, x_test);
  const LinearSolution lin = solve_readout_covariance(d, 1);
  const Matrix f_lin = mean_predictor(lin, x_test);
  CHECK((gp.mean - f_lin).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("generalization error decomposition") {
  const Dataset d = make_toy_task(8, 16, 2, {0.5, 0.5},
                                  LabelAssignment::FixedRatio, 1.0, 0.0, 27);
  GPKernel k{Nonlinearity::Linear, 1, {1.0}};

  SUBCASE("perfect predictions on the training set") {
    const GpErrors err = gp_generalization_error(k, d, d.X, d.Y);
    CHECK(err.total.cwiseAbs().maxCoeff() < 1e-8);
  }

  SUBCASE("held-out orthogonal inputs: squared target plus prior variance") {
    Rng rng(4);
    Matrix x(d.n0, 1);
    for (int i = 0; i < d.n0; ++i) x(i, 0) = rng.normal();
    x.col(0) -= d.X * (pseudo_inverse(d.input_kernel()) * d.k0(x.col(0)));
    Matrix y_test(1, 2);
    y_test << 1.0, 0.0;
    const GpErrors err = gp_generalization_error(k, d, x, y_test);
    const double kappa = x.col(0).squaredNorm() / d.n0;
    CHECK(err.bias[0] == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(err.bias[1] == doctest::Approx(0.0).epsilon(1e-8));
    CHECK(err.variance[0] == doctest::Approx(kappa).epsilon(1e-8));
    CHECK(err.total[0] == doctest::Approx(1.0 + kappa).epsilon(1e-8));
  }
}

TEST_CASE("gp mean is invariant under training order") {
  const Dataset d = make_toy_task(9, 10, 3, {0.5, 0.25, 0.25},
                                  LabelAssignment::FixedRatio, 1.0, 0.5, 2);
  Dataset rev = d;
  for (int j = 0; j < d.p; ++j) {
    rev.X.col(j) = d.X.col(d.p - 1 - j);
    rev.labels[j] = d.labels[d.p - 1 - j];
  }
  rev.Y = one_hot_targets(rev.labels, rev.m, rev.y_plus, rev.y_minus);

  Rng rng(8);
  Matrix x_test(d.n0, 3);
  for (int i = 0; i < x_test.size(); ++i) x_test.data()[i] = rng.normal();
  GPKernel k{Nonlinearity::ErfSigmoid, 2, {1.0, 1.0}};
  const GpPrediction a = gp_predict(k, d, x_test);
  const GpPrediction b = gp_predict(k, rev, x_test);
  CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() < 1e-9);
}
