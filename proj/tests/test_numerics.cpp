#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nonlazy/numerics.hpp"
#include "test_helpers.hpp"

#include <cmath>

using namespace nonlazy;

TEST_CASE("gauss-hermite weights sum to sqrt(pi)") {
  for (int order : {2, 8, 40, 80, 200}) {
    const QuadratureRule rule = QuadratureRule::gauss_hermite(order);
    CHECK(rule.weights.sum() == doctest::Approx(std::sqrt(M_PI)).epsilon(1e-13));
    CHECK(rule.weights.minCoeff() > 0.0);
  }
}

TEST_CASE("quadrature is exact for polynomials up to degree 2 order - 1") {
  // Standard normal moments: E[z^k] = (k-1)!! for even k, 0 for odd k.
  const QuadratureRule rule = QuadratureRule::gauss_hermite(8);
  for (int k = 0; k <= 15; ++k) {
    const double got = gauss_hermite_expect(
        [k](double z) { return std::pow(z, k); }, 0.0, 1.0, rule);
    double want = 1.0;
    for (int j = k - 1; j >= 1; j -= 2) want *= j;
    if (k % 2 == 1) want = 0.0;
    // Roundoff allowance scales with the magnitude of the summands.
    const double scale = gauss_hermite_expect(
        [k](double z) { return std::pow(std::abs(z), k); }, 0.0, 1.0, rule);
    CHECK(std::abs(got - want) < 1e-10 * std::max(1.0, scale));
  }
}

TEST_CASE("gauss_hermite_expect basics") {
  const QuadratureRule& rule = default_quadrature();
  CHECK(gauss_hermite_expect([](double z) { return z; }, 0.7, 2.0, rule) ==
        doctest::Approx(0.7).epsilon(1e-12));
  CHECK(gauss_hermite_expect([](double z) { return z * z; }, 0.0, 1.0, rule) ==
        doctest::Approx(1.0).epsilon(1e-10));
  CHECK_THROWS_AS(gauss_hermite_expect([](double z) { return z; }, 0.0, -1.0, rule),
                  std::domain_error);
  // Sigmoid expectation agrees with the closed form.
  const double quad = gauss_hermite_expect([](double z) { return erf_sigmoid(z); },
                                           1.0, 1.0, rule);
  CHECK(quad == doctest::Approx(gauss_mean_erf(1.0, 1.0)).epsilon(1e-8));
}

TEST_CASE("gauss_mean_erf against quadrature oracle") {
  CHECK(gauss_mean_erf(0.0, 3.7) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(gauss_mean_erf(1.3, 0.0) == doctest::Approx(erf_sigmoid(1.3)).epsilon(1e-14));
  const QuadratureRule rule = QuadratureRule::gauss_hermite(200);
  const double quad = gauss_hermite_expect([](double z) { return erf_sigmoid(z); },
                                           1.0, 1.0, rule);
  CHECK(std::abs(gauss_mean_erf(1.0, 1.0) - quad) < 1e-10);

  // 100-point grid (mu, sigma^2) in [-4,4] x [0,4].
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) {
      const double mu = -4.0 + 8.0 * i / 9.0;
      const double var = 4.0 * j / 9.0;
      const double closed = gauss_mean_erf(mu, var);
      const double oracle = gauss_hermite_expect(
          [](double z) { return erf_sigmoid(z); }, mu, var, rule);
      CHECK(std::abs(closed - oracle) < 1e-10);
      CHECK(closed > 0.0);
      CHECK(closed < 1.0);
    }
  }
  // Monotone increasing in mu.
  double prev = 0.0;
  for (double mu = -4.0; mu <= 4.0; mu += 0.25) {
    const double v = gauss_mean_erf(mu, 2.0);
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("gauss_mean_relu closed form") {
  CHECK(gauss_mean_relu(0.0, 1.0) ==
        doctest::Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-13));
  CHECK(gauss_mean_relu(2.0, 0.0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(gauss_mean_relu(-1.5, 0.0) == doctest::Approx(0.0));
  CHECK_THROWS_AS(gauss_mean_relu(0.0, -0.5), std::domain_error);

  SUBCASE("Monte-Carlo oracle at (-3, 1)") {
    const double mc = testing_oracles::mc_mean_relu(-3.0, 1.0, 1000000, 77);
    const double closed = gauss_mean_relu(-3.0, 1.0);
    CHECK(std::abs(closed - mc) / closed < 1e-3);
  }

  SUBCASE("direct-integration oracle on the grid") {
    for (int i = 0; i < 10; ++i) {
      for (int j = 0; j < 10; ++j) {
        const double mu = -4.0 + 8.0 * i / 9.0;
        const double var = 0.04 + 3.96 * j / 9.0;
        const double sigma = std::sqrt(var);
        const auto integrand = [mu, var](double z) {
          return z * std::exp(-0.5 * (z - mu) * (z - mu) / var) /
                 std::sqrt(2.0 * M_PI * var);
        };
        const double oracle =
            testing_oracles::simpson(integrand, 0.0, mu + 14.0 * sigma, 20000);
        const double closed = gauss_mean_relu(mu, var);
        CHECK(std::abs(closed - oracle) < 1e-10 + 1e-8 * std::abs(closed));
        CHECK(closed >= std::max(0.0, mu));
      }
    }
  }
}

TEST_CASE("gauss_relu_second_moment") {
  // E[relu(z)^2] for standard normal is 1/2.
  CHECK(gauss_relu_second_moment(0.0, 1.0) == doctest::Approx(0.5).epsilon(1e-13));
  const auto integrand = [](double z) {
    return z * z * std::exp(-0.5 * (z - 0.7) * (z - 0.7) / 2.0) /
           std::sqrt(2.0 * M_PI * 2.0);
  };
  const double oracle = testing_oracles::simpson(integrand, 0.0, 0.7 + 20.0, 20000);
  CHECK(gauss_relu_second_moment(0.7, 2.0) == doctest::Approx(oracle).epsilon(1e-10));
}

TEST_CASE("erfcx stable across the implementation switch") {
  for (double x : {0.0, 0.5, 5.0, 14.9, 15.1, 30.0, 100.0}) {
    const double v = erfcx(x);
    CHECK(v > 0.0);
    if (x >= 5.0) {
      CHECK(v == doctest::Approx(1.0 / (x * std::sqrt(M_PI))).epsilon(0.03));
    }
  }
  // The asymptotic branch agrees with the direct formula where both work.
  for (double x : {15.5, 18.0, 24.0}) {
    CHECK(erfcx(x) == doctest::Approx(std::exp(x * x) * std::erfc(x)).epsilon(1e-12));
  }
}

TEST_CASE("tilted relu moments match direct integration") {
  for (double g : {-3.0, -0.5, 0.0, 0.5, 3.0}) {
    for (double s2 : {0.5, 1.0, 2.0}) {
      const TiltedMoments mom = tilted_moments_relu(g, s2);
      const double span = 12.0 * std::sqrt(s2) + 8.0 * std::abs(g) * s2;
      const auto density = [g, s2](double z) {
        return std::exp(-0.5 * z * z / s2 + g * relu(z)) /
               std::sqrt(2.0 * M_PI * s2);
      };
      const double z0 = testing_oracles::simpson(density, -span, span, 40000);
      const double zphi = testing_oracles::simpson(
          [&](double z) { return density(z) * relu(z); }, -span, span, 40000);
      const double zphi2 = testing_oracles::simpson(
          [&](double z) { return density(z) * relu(z) * relu(z); }, -span, span, 40000);
      const double zz = testing_oracles::simpson(
          [&](double z) { return density(z) * z; }, -span, span, 40000);
      CHECK(mom.log_partition == doctest::Approx(std::log(z0)).epsilon(1e-9));
      CHECK(mom.mean_phi == doctest::Approx(zphi / z0).epsilon(1e-9));
      CHECK(mom.mean_phi2 == doctest::Approx(zphi2 / z0).epsilon(1e-9));
      CHECK(mom.mean_z == doctest::Approx(zz / z0).epsilon(1e-8));
    }
  }
}

TEST_CASE("tilted erf moments match direct integration") {
  const QuadratureRule& rule = default_quadrature();
  for (double g : {-6.0, -1.0, 0.0, 2.0, 8.0}) {
    const TiltedMoments mom = tilted_moments_erf(g, 1.0, rule);
    const auto density = [g](double z) {
      return std::exp(-0.5 * z * z + g * erf_sigmoid(z)) / std::sqrt(2.0 * M_PI);
    };
    const double z0 = testing_oracles::simpson(density, -14.0, 14.0, 40000);
    const double zphi = testing_oracles::simpson(
        [&](double z) { return density(z) * erf_sigmoid(z); }, -14.0, 14.0, 40000);
    CHECK(mom.log_partition == doctest::Approx(std::log(z0)).epsilon(1e-9));
    CHECK(mom.mean_phi == doctest::Approx(zphi / z0).epsilon(1e-9));
  }
}

TEST_CASE("pseudo_inverse satisfies the Penrose identities") {
  const Matrix eye = Matrix::Identity(4, 4);
  CHECK((pseudo_inverse(eye) - eye).cwiseAbs().maxCoeff() < 1e-12);

  Vector v(3);
  v << 0.36, -0.48, 0.8;
  const Matrix proj = v * v.transpose();
  CHECK((pseudo_inverse(proj) - proj).cwiseAbs().maxCoeff() < 1e-10);

  // Random rank-3 PSD 5x5.
  Rng rng(11);
  Matrix b(5, 3);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 3; ++j) b(i, j) = rng.normal();
  }
  const Matrix mpsd = b * b.transpose();
  const Matrix pinv = pseudo_inverse(mpsd, 1e-10);
  CHECK((mpsd * pinv * mpsd - mpsd).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((pinv * mpsd * pinv - pinv).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(((mpsd * pinv).transpose() - mpsd * pinv).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(((pinv * mpsd).transpose() - pinv * mpsd).cwiseAbs().maxCoeff() < 1e-9);

  Matrix rect(2, 3);
  rect.setZero();
  CHECK_THROWS_AS(pseudo_inverse(rect), std::invalid_argument);
}

TEST_CASE("matrix_root") {
  Matrix d2 = Vector::Zero(2).asDiagonal();
  d2(0, 0) = 4.0;
  d2(1, 1) = 9.0;
  const Matrix root = matrix_root(d2, 2);
  CHECK(root(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(root(1, 1) == doctest::Approx(3.0).epsilon(1e-12));

  const Matrix eye = Matrix::Identity(3, 3);
  CHECK((matrix_root(eye, 5) - eye).cwiseAbs().maxCoeff() < 1e-12);

  Rng rng(5);
  Matrix b(3, 3);
  for (int i = 0; i < 9; ++i) b.data()[i] = rng.normal();
  const Matrix mpsd = b * b.transpose();
  const Matrix r3 = matrix_root(mpsd, 3);
  CHECK(((r3 * r3 * r3) - mpsd).norm() / mpsd.norm() < 1e-9);

  Matrix neg = -eye;
  CHECK_THROWS_AS(matrix_root(neg, 2), std::domain_error);
}

TEST_CASE("solve_self_consistent on scalar systems") {
  SolveOptions opts;
  opts.tol = 1e-12;

  const ResidualFn linear = [](const Vector& x) {
    Vector r(1);
    r[0] = x[0] - 1.0;
    return r;
  };
  Vector init(1);
  init[0] = 0.0;
  SolveResult res = solve_self_consistent(linear, init, opts);
  CHECK(res.converged);
  CHECK(res.x[0] == doctest::Approx(1.0).epsilon(1e-10));

  const ResidualFn cubic = [](const Vector& x) {
    Vector r(1);
    r[0] = x[0] * x[0] * x[0] - 8.0;
    return r;
  };
  init[0] = 1.0;
  res = solve_self_consistent(cubic, init, 1e-10, 200);
  CHECK(res.converged);
  CHECK(res.x[0] == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("solver flags non-convergence and keeps the best iterate") {
  const ResidualFn no_root = [](const Vector& x) {
    Vector r(1);
    r[0] = x[0] * x[0] + 1.0;
    return r;
  };
  Vector init(1);
  init[0] = 3.0;
  const SolveResult res = solve_self_consistent(no_root, init, 1e-10, 100);
  CHECK_FALSE(res.converged);
  CHECK(res.residual_norm == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("accepted residual norms are non-increasing") {
  Rng rng(3);
  Matrix a(6, 6);
  for (int i = 0; i < 36; ++i) a.data()[i] = rng.normal();
  const ResidualFn fn = [&a](const Vector& x) {
    Vector r = a * x;
    for (int i = 0; i < r.size(); ++i) r[i] += 0.3 * std::sin(x[i]);
    r[0] -= 1.0;
    return r;
  };
  std::vector<double> norms;
  SolveOptions opts;
  opts.tol = 1e-11;
  opts.on_accept = [&norms](int, double v) { norms.push_back(v); };
  Vector init = Vector::Ones(6);
  solve_self_consistent(fn, init, opts);
  REQUIRE(norms.size() > 1);
  for (std::size_t i = 1; i < norms.size(); ++i) CHECK(norms[i] < norms[i - 1]);
}
