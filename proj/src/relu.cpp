#include "nonlazy/relu.hpp"

#include "nonlazy/rng.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace nonlazy {

namespace {

// Stacked residual for the outlier/bulk system. `smooth_c > 0` replaces the
// ReLU by softplus(., c) in the outlier terms; the bulk tilt integrates the
// exact ReLU analytically and stays exact in both stages.
struct ReluSystem {
  const Dataset* d = nullptr;
  Matrix k0;
  Matrix k0_pinv;
  int n = 0;
  bool with_bulk = false;
  double temperature = 0.0;
  double sigma1_2 = 1.0;
  double smooth_c = 0.0;  // 0 -> exact ReLU

  int p() const { return d->p; }
  int m() const { return d->m; }
  int dim() const { return p() * m() + n * m() + n * p() + (with_bulk ? m() : 0); }
  int n_res() const { return dim(); }

  double phi(double z) const { return smooth_c > 0.0 ? softplus(z, smooth_c) : relu(z); }
  double dphi(double z) const {
    return smooth_c > 0.0 ? softplus_deriv(z, smooth_c) : relu_deriv(z);
  }

  Matrix t(const Vector& u) const {
    return Eigen::Map<const Matrix>(u.data(), p(), m());
  }
  Matrix a_bar(const Vector& u) const {
    return Eigen::Map<const Matrix>(u.data() + p() * m(), n, m());
  }
  Matrix z_bar(const Vector& u) const {
    return Eigen::Map<const Matrix>(u.data() + p() * m() + n * m(), n, p());
  }
  Vector a0(const Vector& u) const {
    if (!with_bulk) return Vector::Zero(m());
    return u.segment(p() * m() + n * m() + n * p(), m());
  }

  Vector residual(const Vector& u) const {
    const Matrix t_m = t(u);
    const Matrix a_m = a_bar(u);
    const Matrix z_m = z_bar(u);
    const Vector a0_v = a0(u);

    Vector res(n_res());
    int idx = 0;
    Matrix phi_z(n, p());
    for (int i = 0; i < n; ++i) {
      const Vector zi = z_m.row(i).transpose();
      const Vector ta = t_m * a_m.row(i).transpose();
      Vector tilt(p());
      for (int mu = 0; mu < p(); ++mu) {
        phi_z(i, mu) = phi(zi[mu]);
        tilt[mu] = dphi(zi[mu]) * ta[mu];
      }
      res.segment(idx, p()) = zi - sigma1_2 * (k0 * tilt);
      idx += p();
    }
    for (int i = 0; i < n; ++i) {
      res.segment(idx, m()) = a_m.row(i).transpose() -
                              (t_m.transpose() * phi_z.row(i).transpose()) / p();
      idx += m();
    }

    Vector bulk_phi = Vector::Zero(p());
    if (with_bulk) {
      const Vector g = t_m * a0_v;
      for (int mu = 0; mu < p(); ++mu) {
        bulk_phi[mu] = tilted_moments_relu(g[mu], sigma1_2).mean_phi;
      }
    }
    for (int mu = 0; mu < p(); ++mu) {
      for (int r = 0; r < m(); ++r) {
        double acc = bulk_phi[mu] * a0_v[r];
        for (int i = 0; i < n; ++i) acc += phi_z(i, mu) * a_m(i, r);
        res[idx++] = d->Y(mu, r) - acc - temperature * t_m(mu, r);
      }
    }
    if (with_bulk) {
      res.segment(idx, m()) = a0_v - (t_m.transpose() * bulk_phi) / p();
      idx += m();
    }
    return res;
  }
};

Vector relu_init(const ReluSystem& sys, const Dataset& d, std::uint64_t seed) {
  Rng rng(seed);
  const int p = sys.p();
  const int m = sys.m();
  Vector u = Vector::Zero(sys.dim());
  Eigen::Map<Matrix> t_m(u.data(), p, m);
  for (int mu = 0; mu < p; ++mu) {
    for (int r = 0; r < m; ++r) t_m(mu, r) = d.Y(mu, r) + 0.05 * rng.normal();
  }
  Eigen::Map<Matrix> z_m(u.data() + p * m + sys.n * m, sys.n, p);
  for (int i = 0; i < sys.n; ++i) {
    const int coded = i % m;
    for (int mu = 0; mu < p; ++mu) {
      z_m(i, mu) = (d.labels[mu] == coded ? 1.0 : -1.0) + 0.02 * rng.normal();
    }
    z_m.row(i) = (sys.k0 * (sys.k0_pinv * z_m.row(i).transpose())).transpose();
  }
  Eigen::Map<Matrix> a_m(u.data() + p * m, sys.n, m);
  for (int i = 0; i < sys.n; ++i) {
    Vector phi_zi(p);
    for (int mu = 0; mu < p; ++mu) phi_zi[mu] = relu(z_m(i, mu));
    a_m.row(i) = ((t_m.transpose() * phi_zi) / p).transpose();
  }
  if (sys.with_bulk) {
    const double phi0 = tilted_moments_relu(0.0, sys.sigma1_2).mean_phi;
    u.segment(p * m + sys.n * m + sys.n * p, m) =
        (t_m.colwise().sum() * (phi0 / p)).transpose();
  }
  return u;
}

}  // namespace

ReluSolution solve_relu(const Dataset& d, int n_outliers, double temperature,
                        BulkMode bulk_mode, std::uint64_t init_seed,
                        const ReluOptions& opts) {
  if (n_outliers < 1) throw ValidationError("need at least one outlier hypothesis");

  ReluSystem sys;
  sys.d = &d;
  sys.k0 = d.input_kernel();
  sys.k0_pinv = pseudo_inverse(sys.k0);
  sys.n = n_outliers;
  sys.with_bulk = bulk_mode == BulkMode::Quadrature;
  sys.temperature = temperature;
  sys.sigma1_2 = opts.sigma1_2;

  if (sys.with_bulk &&
      (sys.k0 - Matrix::Identity(d.p, d.p)).cwiseAbs().maxCoeff() > 1e-8) {
    throw ValidationError("bulk quadrature requires an orthogonal task (K0 == I)");
  }

  SolveOptions sopts;
  sopts.tol = opts.tol;
  sopts.max_iter = opts.max_iter;

  // Stage 1: softplus-smoothed system.
  sys.smooth_c = opts.softplus_c;
  const ResidualFn smooth_fn = [&sys](const Vector& u) { return sys.residual(u); };
  SolveResult stage1;
  stage1.residual_norm = std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < std::max(1, opts.restarts); ++attempt) {
    const Vector init = relu_init(sys, d, init_seed + attempt);
    SolveResult res = solve_self_consistent(smooth_fn, init, sopts);
    if (res.residual_norm < stage1.residual_norm) stage1 = std::move(res);
    if (stage1.converged) break;
  }

  // Stage 2: polish against the exact ReLU system.
  sys.smooth_c = 0.0;
  const ResidualFn exact_fn = [&sys](const Vector& u) { return sys.residual(u); };
  SolveResult polished = solve_self_consistent(exact_fn, stage1.x, sopts);

  ReluSolution sol;
  sol.p = d.p;
  sol.m = d.m;
  sol.n = n_outliers;
  sol.bulk_mode = bulk_mode;
  sol.temperature = temperature;
  sol.sigma1_2 = opts.sigma1_2;
  sol.t = sys.t(polished.x);
  sol.a0 = sys.a0(polished.x);
  sol.outliers.resize(n_outliers);
  const Matrix a_m = sys.a_bar(polished.x);
  const Matrix z_m = sys.z_bar(polished.x);
  for (int i = 0; i < n_outliers; ++i) {
    sol.outliers[i].a_bar = a_m.row(i).transpose();
    sol.outliers[i].z_bar = z_m.row(i).transpose();
  }
  sol.residual = polished.residual_norm;
  sys.smooth_c = opts.softplus_c;
  sol.residual_smoothed = sys.residual(polished.x).norm();
  sol.converged = polished.converged;
  return sol;
}

ReluSolution solve_relu_sweep(const Dataset& d, double temperature,
                              BulkMode bulk_mode, std::uint64_t init_seed,
                              const ReluOptions& opts) {
  ReluSolution best;
  bool have = false;
  for (int n : {d.m - 1, d.m, d.m + 1}) {
    if (n < 1) continue;
    ReluSolution sol = solve_relu(d, n, temperature, bulk_mode, init_seed, opts);
    if (!have) {
      best = std::move(sol);
      have = true;
      continue;
    }
    // Smallest exact-ReLU residual wins; hypotheses that solve the system
    // exactly are tied, and the tie goes to the smaller outlier count.
    const bool both_exact = sol.residual < 1e-8 && best.residual < 1e-8;
    if ((both_exact && sol.n < best.n) ||
        (!both_exact && sol.converged &&
         (!best.converged || sol.residual < best.residual))) {
      best = std::move(sol);
    }
  }
  return best;
}

namespace {

struct BulkStats {
  Vector mean_z;
  Vector var_z;
  Vector mean_phi;
  Vector mean_phi2;
};

BulkStats bulk_stats(const ReluSolution& sol) {
  BulkStats st;
  const int p = sol.p;
  st.mean_z = Vector::Zero(p);
  st.var_z = Vector::Zero(p);
  st.mean_phi = Vector::Zero(p);
  st.mean_phi2 = Vector::Zero(p);
  if (sol.bulk_mode != BulkMode::Quadrature) return st;
  const Vector g = sol.t * sol.a0;
  for (int mu = 0; mu < p; ++mu) {
    const TiltedMoments mom = tilted_moments_relu(g[mu], sol.sigma1_2);
    st.mean_z[mu] = mom.mean_z;
    st.var_z[mu] = std::max(mom.mean_z2 - mom.mean_z * mom.mean_z, 0.0);
    st.mean_phi[mu] = mom.mean_phi;
    st.mean_phi2[mu] = mom.mean_phi2;
  }
  return st;
}

}  // namespace

Vector relu_predictor(const ReluSolution& sol, const Dataset& d, const Vector& x) {
  Matrix xm(x.size(), 1);
  xm.col(0) = x;
  return relu_predictor(sol, d, xm).row(0).transpose();
}

Matrix relu_predictor(const ReluSolution& sol, const Dataset& d,
                      const Matrix& x_test) {
  const Matrix k0_pinv = pseudo_inverse(d.input_kernel());
  const BulkStats bulk = bulk_stats(sol);
  const int pt = static_cast<int>(x_test.cols());
  Matrix f = Matrix::Zero(pt, sol.m);
  for (int j = 0; j < pt; ++j) {
    const Vector x = x_test.col(j);
    const Vector c = k0_pinv * d.k0(x);
    const double gap = std::max(d.kappa0(x) - d.k0(x).dot(c), 0.0);
    for (const ReluOutlier& out : sol.outliers) {
      const double act = relu(c.dot(out.z_bar));
      f.row(j) += act * out.a_bar.transpose();
    }
    if (sol.bulk_mode == BulkMode::Quadrature) {
      // The test preactivation is c^T z plus prior noise; over the bulk
      // posterior it collapses to a Gaussian with these two moments.
      const double mean_star = c.dot(bulk.mean_z);
      const double var_star = sol.sigma1_2 * gap + c.cwiseAbs2().dot(bulk.var_z);
      f.row(j) += gauss_mean_relu(mean_star, var_star) * sol.a0.transpose();
    }
  }
  return f;
}

Matrix relu_kernel(const ReluSolution& sol, const Dataset& d, const Matrix& x_eval) {
  const Matrix k0_pinv = pseudo_inverse(d.input_kernel());
  const BulkStats bulk = bulk_stats(sol);
  const int pe = static_cast<int>(x_eval.cols());

  Matrix outlier_act(static_cast<int>(sol.outliers.size()), pe);
  Vector bulk_mean = Vector::Zero(pe);
  Vector bulk_second = Vector::Zero(pe);
  for (int j = 0; j < pe; ++j) {
    const Vector x = x_eval.col(j);
    const Vector c = k0_pinv * d.k0(x);
    const double gap = std::max(d.kappa0(x) - d.k0(x).dot(c), 0.0);
    for (std::size_t i = 0; i < sol.outliers.size(); ++i) {
      outlier_act(static_cast<int>(i), j) = relu(c.dot(sol.outliers[i].z_bar));
    }
    if (sol.bulk_mode == BulkMode::Quadrature) {
      const double mean_star = c.dot(bulk.mean_z);
      const double var_star = sol.sigma1_2 * gap + c.cwiseAbs2().dot(bulk.var_z);
      bulk_mean[j] = gauss_mean_relu(mean_star, var_star);
      bulk_second[j] = gauss_relu_second_moment(mean_star, var_star);
    }
  }

  Matrix k = outlier_act.transpose() * outlier_act;
  if (sol.bulk_mode == BulkMode::Quadrature) {
    k.noalias() += bulk_mean * bulk_mean.transpose();
    for (int j = 0; j < pe; ++j) {
      k(j, j) += bulk_second[j] - bulk_mean[j] * bulk_mean[j];
    }
  }
  return k;
}

}  // namespace nonlazy
