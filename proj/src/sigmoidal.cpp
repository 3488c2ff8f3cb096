#include "nonlazy/sigmoidal.hpp"

#include "nonlazy/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nonlazy {

bool CodePattern::contains(int r) const {
  return std::find(active.begin(), active.end(), r) != active.end();
}

std::string CodePattern::to_string(int m) const {
  std::string s(m, '0');
  for (int r : active) s[r] = '1';
  return s;
}

CodePattern CodePattern::from_string(const std::string& bits) {
  CodePattern c;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] == '1') c.active.push_back(static_cast<int>(i));
  }
  return c;
}

std::vector<CodePattern> enumerate_nonempty_codes(int m) {
  std::vector<CodePattern> out;
  for (int mask = 1; mask < (1 << m); ++mask) {
    CodePattern c;
    for (int r = 0; r < m; ++r) {
      if (mask & (1 << r)) c.active.push_back(r);
    }
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

struct ClassInfo {
  int m = 0;
  int p = 0;
  Vector fractions;      // p_c
  Matrix class_targets;  // (c, r) -> y_plus if r == c else y_minus
};

ClassInfo make_class_info(const Dataset& d) {
  ClassInfo info;
  info.m = d.m;
  info.p = d.p;
  info.fractions = Vector::Zero(d.m);
  for (int lab : d.labels) info.fractions[lab] += 1.0 / d.p;
  info.class_targets = Matrix::Constant(d.m, d.m, d.y_minus);
  info.class_targets.diagonal().setConstant(d.y_plus);
  return info;
}

// The branch weights enter the target equation linearly, so they are not
// treated as solver unknowns: given atoms and activation profiles they are
// the exact minimizer of |target residual|^2 subject to sum w = 1 (variable
// projection). `design` has one column per branch.
Vector project_weights(const Matrix& design, const Vector& target) {
  const int n = static_cast<int>(design.cols());
  if (n == 1) return Vector::Ones(1);
  Matrix kkt(n + 1, n + 1);
  kkt.setZero();
  kkt.topLeftCorner(n, n) = design.transpose() * design;
  kkt.topLeftCorner(n, n).diagonal().array() += 1e-12;
  kkt.block(0, n, n, 1).setOnes();
  kkt.block(n, 0, 1, n).setOnes();
  Vector rhs(n + 1);
  rhs.head(n) = design.transpose() * target;
  rhs[n] = 1.0;
  const Vector sol = kkt.fullPivLu().solve(rhs);
  return sol.head(n);
}

// Code-coherent starting point shared by both solvers: saturate the tilts at
// +-G according to the hypothesis, back out readout atoms from the target
// equation at uniform weights and conjugate values from the tilt relation.
struct CoherentInit {
  Matrix that;  // m x m
  Matrix a;     // n x m
  Matrix g;     // n x m target tilts
};

CoherentInit coherent_init(const ClassInfo& info,
                           const std::vector<CodePattern>& codes,
                           double saturation_g, double sigma1_2,
                           const QuadratureRule& rule, std::uint64_t seed) {
  Rng rng(seed);
  const int m = info.m;
  const int n = static_cast<int>(codes.size());
  CoherentInit init;
  init.g = Matrix(n, m);
  Matrix mean_phi(n, m);
  for (int gam = 0; gam < n; ++gam) {
    for (int c = 0; c < m; ++c) {
      init.g(gam, c) = codes[gam].contains(c) ? saturation_g : -saturation_g;
      mean_phi(gam, c) = tilted_moments_erf(init.g(gam, c), sigma1_2, rule).mean_phi;
    }
  }
  // Minimum-norm atoms from y_c^r = (1/n) sum_gamma a_gamma^r mphi(gamma, c).
  const Matrix design = mean_phi.transpose() / n;  // (c, gamma)
  Eigen::JacobiSVD<Matrix> svd_a(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd_a.setThreshold(1e-10);
  init.a = Matrix(n, m);
  for (int r = 0; r < m; ++r) {
    init.a.col(r) = svd_a.solve(info.class_targets.col(r));
  }
  // Conjugate values from g(gamma, c) = sum_r that(c, r) a(gamma, r).
  Eigen::JacobiSVD<Matrix> svd_t(init.a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd_t.setThreshold(1e-10);
  init.that = Matrix(m, m);
  for (int c = 0; c < m; ++c) {
    init.that.row(c) = svd_t.solve(init.g.col(c)).transpose();
  }
  for (int i = 0; i < init.that.size(); ++i) init.that.data()[i] += 0.02 * rng.normal();
  for (int i = 0; i < init.a.size(); ++i) init.a.data()[i] += 0.02 * rng.normal();
  return init;
}

// ---------------------------------------------------------------------------
// Orthogonal-input reduction. Unknowns: per-class conjugate values
// that(c, r) and branch readouts a(gamma, r). The weights come from variable
// projection on the target equations; the branch-energy quasi-degeneracy
// conditions (required for finite branch fractions in the large-P limit)
// close the system.

struct OrthoSystem {
  ClassInfo info;
  int n = 0;
  double temperature = 0.0;
  double sigma1_2 = 1.0;
  double deg_weight = 1.0;
  QuadratureRule rule;

  int mm() const { return info.m * info.m; }
  int dim() const { return mm() + n * info.m; }
  int n_res() const { return n * info.m + mm() + n; }

  Matrix that(const Vector& u) const {
    return Eigen::Map<const Matrix>(u.data(), info.m, info.m);
  }
  Matrix a(const Vector& u) const {
    return Eigen::Map<const Matrix>(u.data() + mm(), n, info.m);
  }

  Matrix mean_phi(const Matrix& that_m, const Matrix& a_m) const {
    const Matrix g = a_m * that_m.transpose();  // (gamma, c)
    Matrix out(n, info.m);
    for (int gam = 0; gam < n; ++gam) {
      for (int c = 0; c < info.m; ++c) {
        out(gam, c) = tilted_moments_erf(g(gam, c), sigma1_2, rule).mean_phi;
      }
    }
    return out;
  }

  Vector energies(const Matrix& that_m, const Matrix& a_m) const {
    const Matrix g = a_m * that_m.transpose();
    Vector e(n);
    for (int gam = 0; gam < n; ++gam) {
      double logz = 0.0;
      for (int c = 0; c < info.m; ++c) {
        logz += info.fractions[c] *
                tilted_moments_erf(g(gam, c), sigma1_2, rule).log_partition;
      }
      e[gam] = 0.5 * a_m.row(gam).squaredNorm() - logz;
    }
    return e;
  }

  Vector weights(const Matrix& that_m, const Matrix& a_m, const Matrix& mphi) const {
    const int m = info.m;
    Matrix design(m * m, n);
    Vector target(m * m);
    for (int c = 0; c < m; ++c) {
      for (int r = 0; r < m; ++r) {
        const int row = c * m + r;
        target[row] = info.class_targets(c, r) - temperature * that_m(c, r);
        for (int gam = 0; gam < n; ++gam) {
          design(row, gam) = a_m(gam, r) * mphi(gam, c);
        }
      }
    }
    return project_weights(design, target);
  }

  Vector residual(const Vector& u) const {
    const Matrix that_m = that(u);
    const Matrix a_m = a(u);
    const int m = info.m;
    const Matrix mphi = mean_phi(that_m, a_m);
    const Vector w = weights(that_m, a_m, mphi);
    const Vector e = energies(that_m, a_m);

    Vector res(n_res());
    int idx = 0;
    // Readout equations a_gamma = (1/P) t^T <phi(z)>.
    for (int gam = 0; gam < n; ++gam) {
      for (int r = 0; r < m; ++r) {
        double acc = 0.0;
        for (int c = 0; c < m; ++c) {
          acc += info.fractions[c] * that_m(c, r) * mphi(gam, c);
        }
        res[idx++] = a_m(gam, r) - acc;
      }
    }
    // Target equations y = sum_gamma P_gamma a_gamma <phi> + T t.
    for (int c = 0; c < m; ++c) {
      for (int r = 0; r < m; ++r) {
        double acc = 0.0;
        for (int gam = 0; gam < n; ++gam) {
          acc += w[gam] * a_m(gam, r) * mphi(gam, c);
        }
        res[idx++] = info.class_targets(c, r) - acc - temperature * that_m(c, r);
      }
    }
    // Quasi-degeneracy of the branch energies.
    const double mean_e = e.mean();
    for (int gam = 0; gam < n; ++gam) {
      res[idx++] = deg_weight * (e[gam] - mean_e);
    }
    return res;
  }
};

// ---------------------------------------------------------------------------
// Basin probe at fixed conjugate values: damped Newton on the branch
// equation a = sum_c p_c that_c <phi>_{g_c(a)}. The set of codes whose
// basins exist (stationary point realizing the code, with a positive
// definite Hessian I - t^T Cov[phi] t) is the coding scheme a frozen
// sampled population can express.

struct BranchProbe {
  bool found = false;
  Vector a;
  Vector mean_phi;   // per class
  Vector mean_phi2;  // per class
  Vector mean_z;     // per class
  double energy = 0.0;
  bool minimum = false;
  CodePattern realized;
};

BranchProbe probe_from(const ClassInfo& info, const Matrix& that_m,
                       double sigma1_2, const QuadratureRule& rule, Vector a) {
  const int m = info.m;
  BranchProbe pr;
  const auto res_of = [&](const Vector& av) {
    Vector r = av;
    const Vector g = that_m * av;
    for (int c = 0; c < m; ++c) {
      r -= info.fractions[c] * tilted_moments_erf(g[c], sigma1_2, rule).mean_phi *
           that_m.row(c).transpose();
    }
    return r;
  };
  Vector res = res_of(a);
  for (int it = 0; it < 200 && res.norm() > 1e-12; ++it) {
    const Vector g = that_m * a;
    Matrix hess = Matrix::Identity(m, m);
    for (int c = 0; c < m; ++c) {
      const TiltedMoments mom = tilted_moments_erf(g[c], sigma1_2, rule);
      const double var = std::max(mom.mean_phi2 - mom.mean_phi * mom.mean_phi, 0.0);
      hess.noalias() -=
          (info.fractions[c] * var) * (that_m.row(c).transpose() * that_m.row(c));
    }
    const Vector step = hess.fullPivLu().solve(res);
    if (!step.allFinite()) return pr;
    double damp = 1.0;
    bool improved = false;
    for (int bt = 0; bt < 40; ++bt) {
      const Vector a_try = a - damp * step;
      const Vector r_try = res_of(a_try);
      if (r_try.norm() < res.norm()) {
        a = a_try;
        res = r_try;
        improved = true;
        break;
      }
      damp *= 0.5;
    }
    if (!improved || a.norm() > 100.0) return pr;
  }
  if (res.norm() > 1e-10) return pr;

  pr.found = true;
  pr.a = a;
  pr.mean_phi = Vector(m);
  pr.mean_phi2 = Vector(m);
  pr.mean_z = Vector(m);
  double logz = 0.0;
  Matrix hess = Matrix::Identity(m, m);
  const Vector g = that_m * a;
  for (int c = 0; c < m; ++c) {
    const TiltedMoments mom = tilted_moments_erf(g[c], sigma1_2, rule);
    pr.mean_phi[c] = mom.mean_phi;
    pr.mean_phi2[c] = mom.mean_phi2;
    pr.mean_z[c] = mom.mean_z;
    logz += info.fractions[c] * mom.log_partition;
    if (mom.mean_phi > 0.5) pr.realized.active.push_back(c);
    const double var = std::max(mom.mean_phi2 - mom.mean_phi * mom.mean_phi, 0.0);
    hess.noalias() -=
        (info.fractions[c] * var) * (that_m.row(c).transpose() * that_m.row(c));
  }
  pr.energy = 0.5 * a.squaredNorm() - logz;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(hess);
  pr.minimum = eig.eigenvalues().minCoeff() > 0.0;
  return pr;
}

BranchProbe probe_code(const ClassInfo& info, const Matrix& that_m,
                       double sigma1_2, const QuadratureRule& rule,
                       const CodePattern& code) {
  BranchProbe fallback;
  for (double amp : {1.5, 3.0, 0.75}) {
    Vector a(info.m);
    for (int r = 0; r < info.m; ++r) a[r] = code.contains(r) ? amp : -amp;
    BranchProbe pr = probe_from(info, that_m, sigma1_2, rule, std::move(a));
    if (pr.found && pr.realized == code) return pr;
    if (pr.found && !fallback.found) fallback = std::move(pr);
  }
  return fallback;
}

Matrix that_of_solution(const SigmoidalSolution& sol, const Dataset& d) {
  Matrix that(d.m, d.m);
  std::vector<bool> seen(d.m, false);
  for (int mu = 0; mu < d.p; ++mu) {
    const int c = d.labels[mu];
    if (!seen[c]) {
      that.row(c) = sol.t.row(mu);
      seen[c] = true;
    }
  }
  return that;
}

// ---------------------------------------------------------------------------
// General-input system under the delta approximation. Unknowns: t (P x m),
// a (n x m), z (n x P); weights again projected, degeneracy rows as above.
// The preactivation stationarity is used in the K0-multiplied form
// z = sigma1^2 K0 (phi'(z) o (t a)), which keeps z inside the span of K0 and
// avoids the pseudo-inverse in the residual.

struct GeneralSystem {
  const Dataset* d = nullptr;
  Matrix k0;
  Matrix k0_pinv;
  int n = 0;
  double temperature = 0.0;
  double sigma1_2 = 1.0;
  double deg_weight = 1.0;

  int p() const { return d->p; }
  int m() const { return d->m; }
  int dim() const { return p() * m() + n * m() + n * p(); }
  int n_res() const { return n * p() + n * m() + p() * m() + n; }

  Matrix t(const Vector& u) const {
    return Eigen::Map<const Matrix>(u.data(), p(), m());
  }
  Matrix a(const Vector& u) const {
    return Eigen::Map<const Matrix>(u.data() + p() * m(), n, m());
  }
  Matrix z(const Vector& u) const {
    return Eigen::Map<const Matrix>(u.data() + p() * m() + n * m(), n, p());
  }

  Matrix phi_of_z(const Matrix& z_m) const {
    return z_m.unaryExpr([](double v) { return erf_sigmoid(v); });
  }

  Vector weights(const Matrix& t_m, const Matrix& a_m, const Matrix& phi_z) const {
    Matrix design(p() * m(), n);
    Vector target(p() * m());
    for (int mu = 0; mu < p(); ++mu) {
      for (int r = 0; r < m(); ++r) {
        const int row = mu * m() + r;
        target[row] = d->Y(mu, r) - temperature * t_m(mu, r);
        for (int gam = 0; gam < n; ++gam) {
          design(row, gam) = phi_z(gam, mu) * a_m(gam, r);
        }
      }
    }
    return project_weights(design, target);
  }

  Vector energies(const Matrix& t_m, const Matrix& a_m, const Matrix& z_m,
                  const Matrix& phi_z) const {
    Vector e(n);
    for (int gam = 0; gam < n; ++gam) {
      const Vector zg = z_m.row(gam).transpose();
      const Vector ta = t_m * a_m.row(gam).transpose();
      const double quad = zg.dot(k0_pinv * zg) / (2.0 * sigma1_2);
      const double tilt = ta.dot(phi_z.row(gam).transpose());
      e[gam] = 0.5 * a_m.row(gam).squaredNorm() + (quad - tilt) / p();
    }
    return e;
  }

  Vector residual(const Vector& u) const {
    const Matrix t_m = t(u);
    const Matrix a_m = a(u);
    const Matrix z_m = z(u);

    Matrix phi_z(n, p());
    Vector res(n_res());
    int idx = 0;
    for (int gam = 0; gam < n; ++gam) {
      const Vector zg = z_m.row(gam).transpose();
      const Vector ta = t_m * a_m.row(gam).transpose();
      Vector tilt(p());
      for (int mu = 0; mu < p(); ++mu) {
        phi_z(gam, mu) = erf_sigmoid(zg[mu]);
        tilt[mu] = erf_sigmoid_deriv(zg[mu]) * ta[mu];
      }
      res.segment(idx, p()) = zg - sigma1_2 * (k0 * tilt);
      idx += p();
    }
    for (int gam = 0; gam < n; ++gam) {
      res.segment(idx, m()) = a_m.row(gam).transpose() -
                              (t_m.transpose() * phi_z.row(gam).transpose()) / p();
      idx += m();
    }
    const Vector w = weights(t_m, a_m, phi_z);
    for (int mu = 0; mu < p(); ++mu) {
      for (int r = 0; r < m(); ++r) {
        double acc = 0.0;
        for (int gam = 0; gam < n; ++gam) acc += w[gam] * phi_z(gam, mu) * a_m(gam, r);
        res[idx++] = d->Y(mu, r) - acc - temperature * t_m(mu, r);
      }
    }
    const Vector e = energies(t_m, a_m, z_m, phi_z);
    const double mean_e = e.mean();
    for (int gam = 0; gam < n; ++gam) {
      res[idx++] = deg_weight * (e[gam] - mean_e);
    }
    return res;
  }
};

double full_system_residual(const SigmoidalSolution& sol, const Dataset& d) {
  const int p = sol.p, m = sol.m;
  const int n = static_cast<int>(sol.branches.size());
  double acc = 0.0;
  for (int gam = 0; gam < n; ++gam) {
    const Vector ar = sol.branches[gam].a -
                      (sol.t.transpose() * sol.branches[gam].phi_mean) / p;
    acc += ar.squaredNorm();
  }
  for (int mu = 0; mu < p; ++mu) {
    for (int r = 0; r < m; ++r) {
      double f = 0.0;
      for (int gam = 0; gam < n; ++gam) {
        f += sol.branches[gam].weight * sol.branches[gam].phi_mean[mu] *
             sol.branches[gam].a[r];
      }
      const double res = d.Y(mu, r) - f - sol.temperature * sol.t(mu, r);
      acc += res * res;
    }
  }
  return std::sqrt(acc);
}

// Code realized by a branch: classes whose mean activation exceeds 1/2.
CodePattern realized_code(const Vector& phi_mean, const std::vector<int>& labels,
                          int m) {
  Vector class_mean = Vector::Zero(m);
  Vector counts = Vector::Zero(m);
  for (std::size_t mu = 0; mu < labels.size(); ++mu) {
    class_mean[labels[mu]] += phi_mean[static_cast<int>(mu)];
    counts[labels[mu]] += 1.0;
  }
  CodePattern code;
  for (int c = 0; c < m; ++c) {
    if (class_mean[c] / counts[c] > 0.5) code.active.push_back(c);
  }
  return code;
}

void finalize_codes(SigmoidalSolution& sol, const Dataset& d) {
  sol.realized.clear();
  sol.codes_match = true;
  for (const SigmoidalBranch& br : sol.branches) {
    sol.realized.push_back(realized_code(br.phi_mean, d.labels, d.m));
  }
  for (std::size_t gam = 0; gam < sol.branches.size(); ++gam) {
    if (!(sol.realized[gam] == sol.codes[gam])) sol.codes_match = false;
  }
}

// A converged stationary point is only physical if the projected weights
// form a distribution.
bool simplex_ok(const Vector& w) {
  return w.minCoeff() > -1e-8 && w.maxCoeff() < 1.0 + 1e-8;
}

Vector clamp_simplex(Vector w) {
  w = w.cwiseMax(0.0);
  return w / w.sum();
}

}  // namespace

SigmoidalSolution solve_orthogonal(const Dataset& d,
                                   const std::vector<CodePattern>& codes,
                                   double temperature, std::uint64_t init_seed,
                                   const SigmoidalOptions& opts) {
  const Matrix k0 = d.input_kernel();
  if ((k0 - Matrix::Identity(d.p, d.p)).cwiseAbs().maxCoeff() > 1e-8) {
    throw ValidationError("solve_orthogonal requires an orthogonal task (K0 == I)");
  }
  if (codes.empty()) throw ValidationError("at least one code hypothesis required");

  OrthoSystem sys;
  sys.info = make_class_info(d);
  sys.n = static_cast<int>(codes.size());
  sys.temperature = temperature;
  sys.sigma1_2 = opts.sigma1_2;
  sys.deg_weight = opts.degeneracy_weight;
  sys.rule = QuadratureRule::gauss_hermite(opts.quad_order);

  SolveOptions sopts;
  sopts.tol = opts.tol;
  sopts.max_iter = opts.max_iter;
  const ResidualFn fn = [&sys](const Vector& v) { return sys.residual(v); };

  SolveResult best;
  best.residual_norm = std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < std::max(1, opts.restarts); ++attempt) {
    const CoherentInit ci = coherent_init(sys.info, codes, opts.saturation_g,
                                          opts.sigma1_2, sys.rule,
                                          init_seed + attempt);
    Vector u(sys.dim());
    Eigen::Map<Matrix>(u.data(), d.m, d.m) = ci.that;
    Eigen::Map<Matrix>(u.data() + sys.mm(), sys.n, d.m) = ci.a;
    SolveResult res = solve_self_consistent(fn, u, sopts);
    if (res.residual_norm < best.residual_norm) best = std::move(res);
    if (best.converged) break;
  }

  const Matrix that_m = sys.that(best.x);
  const Matrix a_m = sys.a(best.x);
  const Matrix mphi = sys.mean_phi(that_m, a_m);
  Vector w = sys.weights(that_m, a_m, mphi);
  const bool physical = simplex_ok(w);
  w = clamp_simplex(std::move(w));
  const Matrix g = a_m * that_m.transpose();

  SigmoidalSolution sol;
  sol.p = d.p;
  sol.m = d.m;
  sol.codes = codes;
  sol.temperature = temperature;
  sol.sigma1_2 = opts.sigma1_2;
  sol.orthogonal_path = true;
  sol.converged = best.converged && physical;
  sol.t = Matrix(d.p, d.m);
  for (int mu = 0; mu < d.p; ++mu) {
    sol.t.row(mu) = that_m.row(d.labels[mu]);
  }
  sol.branches.resize(sys.n);
  sol.branch_energies.resize(sys.n);
  for (int gam = 0; gam < sys.n; ++gam) {
    SigmoidalBranch& br = sol.branches[gam];
    br.a = a_m.row(gam).transpose();
    br.weight = w[gam];
    br.z = Vector(d.p);
    br.phi_mean = Vector(d.p);
    br.phi_sq = Vector(d.p);
    double logz = 0.0;
    std::vector<TiltedMoments> per_class(d.m);
    for (int c = 0; c < d.m; ++c) {
      per_class[c] = tilted_moments_erf(g(gam, c), opts.sigma1_2, sys.rule);
      logz += sys.info.fractions[c] * per_class[c].log_partition;
    }
    for (int mu = 0; mu < d.p; ++mu) {
      const TiltedMoments& mom = per_class[d.labels[mu]];
      br.z[mu] = mom.mean_z;
      br.phi_mean[mu] = mom.mean_phi;
      br.phi_sq[mu] = mom.mean_phi2;
    }
    sol.branch_energies[gam] = 0.5 * br.a.squaredNorm() - logz;
  }
  const auto [emin, emax] = std::minmax_element(sol.branch_energies.begin(),
                                                sol.branch_energies.end());
  sol.energy_spread = *emax - *emin;
  sol.residual = full_system_residual(sol, d);
  sol.energy = solution_energy(sol, d);
  finalize_codes(sol, d);
  return sol;
}

bool code_basin_exists(const SigmoidalSolution& sol, const Dataset& d,
                       const CodePattern& code, const SigmoidalOptions& opts) {
  if (!sol.orthogonal_path) {
    throw ValidationError("code_basin_exists expects an orthogonal-path solution");
  }
  const ClassInfo info = make_class_info(d);
  const QuadratureRule rule = QuadratureRule::gauss_hermite(opts.quad_order);
  const BranchProbe pr =
      probe_code(info, that_of_solution(sol, d), sol.sigma1_2, rule, code);
  return pr.found && pr.minimum && pr.realized == code;
}

std::vector<CodePattern> effective_codes(const SigmoidalSolution& sol,
                                         double weight_floor) {
  std::vector<CodePattern> out;
  for (std::size_t gam = 0; gam < sol.branches.size(); ++gam) {
    if (sol.branches[gam].weight >= weight_floor) {
      const CodePattern& code = sol.realized[gam];
      if (std::find(out.begin(), out.end(), code) == out.end()) out.push_back(code);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

SigmoidalScheme discover_scheme(const Dataset& d, double temperature,
                                std::uint64_t init_seed,
                                const SigmoidalOptions& opts) {
  if (d.m > 4) throw ValidationError("scheme discovery enumerates codes for m <= 4");
  // Anchor hypotheses, most robust first: the (m-1)-subset codes, then the
  // singletons, then all-pairs-plus-full for m = 3.
  std::vector<std::vector<CodePattern>> anchors;
  {
    std::vector<CodePattern> pairs, singles;
    for (const CodePattern& c : enumerate_nonempty_codes(d.m)) {
      if (static_cast<int>(c.active.size()) == std::max(d.m - 1, 1)) {
        pairs.push_back(c);
      }
      if (c.active.size() == 1) singles.push_back(c);
    }
    anchors.push_back(pairs);
    if (d.m > 1) anchors.push_back(singles);
  }

  SigmoidalScheme scheme;
  bool anchored = false;
  for (const auto& anchor : anchors) {
    SigmoidalSolution sol = solve_orthogonal(d, anchor, temperature, init_seed, opts);
    if (!sol.converged || !sol.codes_match) continue;
    scheme.solution = std::move(sol);
    anchored = true;
    break;
  }
  if (!anchored) {
    scheme.solution =
        solve_orthogonal(d, anchors.front(), temperature, init_seed, opts);
  }
  for (const CodePattern& code : enumerate_nonempty_codes(d.m)) {
    if (code_basin_exists(scheme.solution, d, code, opts)) {
      scheme.basins.push_back(code);
    }
  }
  // Re-solve on the discovered set when it extends the anchor cleanly.
  if (!scheme.basins.empty() && !(scheme.basins == scheme.solution.codes)) {
    SigmoidalSolution refined =
        solve_orthogonal(d, scheme.basins, temperature, init_seed, opts);
    if (refined.converged && refined.codes_match) {
      scheme.solution = std::move(refined);
    }
  }
  return scheme;
}

SigmoidalSolution solve_general(const Dataset& d,
                                const std::vector<CodePattern>& codes,
                                double temperature, std::uint64_t init_seed,
                                const SigmoidalOptions& opts) {
  if (codes.empty()) throw ValidationError("at least one code hypothesis required");

  GeneralSystem sys;
  sys.d = &d;
  sys.k0 = d.input_kernel();
  sys.k0_pinv = pseudo_inverse(sys.k0);
  sys.n = static_cast<int>(codes.size());
  sys.temperature = temperature;
  sys.sigma1_2 = opts.sigma1_2;
  sys.deg_weight = opts.degeneracy_weight;

  const ClassInfo info = make_class_info(d);
  const QuadratureRule rule = QuadratureRule::gauss_hermite(opts.quad_order);

  SolveOptions sopts;
  sopts.tol = opts.tol;
  sopts.max_iter = opts.max_iter;
  const ResidualFn fn = [&sys](const Vector& v) { return sys.residual(v); };

  SolveResult best;
  best.residual_norm = std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < std::max(1, opts.restarts); ++attempt) {
    const CoherentInit ci = coherent_init(info, codes, opts.saturation_g,
                                          opts.sigma1_2, rule, init_seed + attempt);
    Rng rng(init_seed + 1000 + attempt);
    Vector u = Vector::Zero(sys.dim());
    {
      Eigen::Map<Matrix> t_m(u.data(), d.p, d.m);
      for (int mu = 0; mu < d.p; ++mu) t_m.row(mu) = ci.that.row(d.labels[mu]);
      Eigen::Map<Matrix> a_m(u.data() + d.p * d.m, sys.n, d.m);
      a_m = ci.a;
      Eigen::Map<Matrix> z_m(u.data() + d.p * d.m + sys.n * d.m, sys.n, d.p);
      for (int gam = 0; gam < sys.n; ++gam) {
        for (int mu = 0; mu < d.p; ++mu) {
          z_m(gam, mu) =
              (codes[gam].contains(d.labels[mu]) ? 2.0 : -2.0) + 0.02 * rng.normal();
        }
        // Keep the init inside the span of K0 (no-op for invertible K0).
        z_m.row(gam) = (sys.k0 * (sys.k0_pinv * z_m.row(gam).transpose())).transpose();
      }
    }
    SolveResult res = solve_self_consistent(fn, u, sopts);
    if (res.residual_norm < best.residual_norm) best = std::move(res);
    if (best.converged) break;
  }

  const Matrix t_m = sys.t(best.x);
  const Matrix a_m = sys.a(best.x);
  const Matrix z_m = sys.z(best.x);
  const Matrix phi_z = sys.phi_of_z(z_m);
  Vector w = sys.weights(t_m, a_m, phi_z);
  const bool physical = simplex_ok(w);
  w = clamp_simplex(std::move(w));

  SigmoidalSolution sol;
  sol.p = d.p;
  sol.m = d.m;
  sol.codes = codes;
  sol.temperature = temperature;
  sol.sigma1_2 = opts.sigma1_2;
  sol.orthogonal_path = false;
  sol.converged = best.converged && physical;
  sol.t = t_m;
  sol.branches.resize(sys.n);
  sol.branch_energies.resize(sys.n);
  for (int gam = 0; gam < sys.n; ++gam) {
    SigmoidalBranch& br = sol.branches[gam];
    br.a = a_m.row(gam).transpose();
    br.weight = w[gam];
    br.z = z_m.row(gam).transpose();
    br.phi_mean = phi_z.row(gam).transpose();
    br.phi_sq = br.phi_mean.cwiseProduct(br.phi_mean);
    const double quad = br.z.dot(sys.k0_pinv * br.z) / (2.0 * opts.sigma1_2);
    const double tilt = (t_m * br.a).dot(br.phi_mean);
    sol.branch_energies[gam] = 0.5 * br.a.squaredNorm() + (quad - tilt) / d.p;
  }
  const auto [emin, emax] = std::minmax_element(sol.branch_energies.begin(),
                                                sol.branch_energies.end());
  sol.energy_spread = *emax - *emin;
  sol.residual = full_system_residual(sol, d);
  sol.energy = solution_energy(sol, d);
  finalize_codes(sol, d);
  return sol;
}

std::vector<double> branch_energy(const SigmoidalSolution& sol, const Dataset& d) {
  const int n = static_cast<int>(sol.branches.size());
  std::vector<double> energies(n);
  if (sol.orthogonal_path) {
    const QuadratureRule& rule = default_quadrature();
    for (int gam = 0; gam < n; ++gam) {
      const Vector ta = sol.t * sol.branches[gam].a;
      double logz = 0.0;
      for (int mu = 0; mu < d.p; ++mu) {
        logz += tilted_moments_erf(ta[mu], sol.sigma1_2, rule).log_partition;
      }
      energies[gam] = 0.5 * sol.branches[gam].a.squaredNorm() - logz / d.p;
    }
  } else {
    const Matrix k0_pinv = pseudo_inverse(d.input_kernel());
    for (int gam = 0; gam < n; ++gam) {
      const SigmoidalBranch& br = sol.branches[gam];
      const double quad = br.z.dot(k0_pinv * br.z) / (2.0 * sol.sigma1_2);
      const double tilt = (sol.t * br.a).dot(br.phi_mean);
      energies[gam] = 0.5 * br.a.squaredNorm() + (quad - tilt) / d.p;
    }
  }
  return energies;
}

double solution_energy(const SigmoidalSolution& sol, const Dataset& d) {
  // e(t) = (1/P) tr t^T Y - (T / 2P) |t|^2 + sum_gamma P_gamma E_gamma.
  double e = (sol.t.cwiseProduct(d.Y)).sum() / d.p -
             0.5 * sol.temperature * sol.t.squaredNorm() / d.p;
  for (std::size_t gam = 0; gam < sol.branches.size(); ++gam) {
    e += sol.branches[gam].weight * sol.branch_energies[gam];
  }
  return e;
}

FinitePCorrection finite_p_correction(const SigmoidalSolution& sol, int p) {
  FinitePCorrection out;
  const int m = sol.m;
  for (const SigmoidalBranch& br : sol.branches) {
    Matrix hess = Matrix::Identity(m, m);
    for (int mu = 0; mu < sol.p; ++mu) {
      const double var = std::max(br.phi_sq[mu] - br.phi_mean[mu] * br.phi_mean[mu], 0.0);
      hess.noalias() -= (var / sol.p) * (sol.t.row(mu).transpose() * sol.t.row(mu));
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(hess);
    const bool pd = eig.eigenvalues().minCoeff() > 0.0;
    out.stable.push_back(pd);
    if (pd) {
      out.covariances.push_back(hess.inverse() / p);
    } else {
      out.covariances.push_back(
          Matrix::Constant(m, m, std::numeric_limits<double>::quiet_NaN()));
    }
  }
  return out;
}

namespace {

// <phi(z*)> with z* | z_gamma ~ N(k0^T K0^+ z_gamma, sigma1^2 gap(x)).
struct TestMoments {
  Matrix mean_phi;  // (gamma, eval)
  Vector gap;       // per eval input
};

TestMoments test_phi_means(const SigmoidalSolution& sol, const Dataset& d,
                           const Matrix& x_eval) {
  const Matrix k0_pinv = pseudo_inverse(d.input_kernel());
  const int pe = static_cast<int>(x_eval.cols());
  const int n = static_cast<int>(sol.branches.size());
  TestMoments tm;
  tm.mean_phi = Matrix(n, pe);
  tm.gap = Vector(pe);
  for (int j = 0; j < pe; ++j) {
    const Vector x = x_eval.col(j);
    const Vector k0x = d.k0(x);
    const Vector k0p = k0_pinv * k0x;
    tm.gap[j] = std::max(d.kappa0(x) - k0x.dot(k0p), 0.0);
    for (int gam = 0; gam < n; ++gam) {
      const double mu = k0p.dot(sol.branches[gam].z);
      tm.mean_phi(gam, j) = gauss_mean_erf(mu, sol.sigma1_2 * tm.gap[j]);
    }
  }
  return tm;
}

}  // namespace

Vector predictor(const SigmoidalSolution& sol, const Dataset& d, const Vector& x) {
  Matrix xm(x.size(), 1);
  xm.col(0) = x;
  return predictor(sol, d, xm).row(0).transpose();
}

Matrix predictor(const SigmoidalSolution& sol, const Dataset& d,
                 const Matrix& x_test) {
  const TestMoments tm = test_phi_means(sol, d, x_test);
  const int pe = static_cast<int>(x_test.cols());
  Matrix f = Matrix::Zero(pe, sol.m);
  for (std::size_t gam = 0; gam < sol.branches.size(); ++gam) {
    const SigmoidalBranch& br = sol.branches[gam];
    f.noalias() += br.weight * tm.mean_phi.row(gam).transpose() * br.a.transpose();
  }
  return f;
}

Matrix training_kernel(const SigmoidalSolution& sol) {
  Matrix k = Matrix::Zero(sol.p, sol.p);
  for (const SigmoidalBranch& br : sol.branches) {
    k.noalias() += br.weight * (br.phi_mean * br.phi_mean.transpose());
    // Exact second moment on the diagonal.
    k.diagonal() += br.weight * (br.phi_sq - br.phi_mean.cwiseProduct(br.phi_mean));
  }
  return k;
}

Matrix kernel(const SigmoidalSolution& sol, const Dataset& d, const Matrix& x_eval) {
  const TestMoments tm = test_phi_means(sol, d, x_eval);
  const int pe = static_cast<int>(x_eval.cols());
  const QuadratureRule& rule = default_quadrature();
  const Matrix k0_pinv = pseudo_inverse(d.input_kernel());
  Matrix k = Matrix::Zero(pe, pe);
  for (std::size_t gam = 0; gam < sol.branches.size(); ++gam) {
    k.noalias() += sol.branches[gam].weight *
                   (tm.mean_phi.row(gam).transpose() * tm.mean_phi.row(gam));
  }
  // Diagonal: <phi^2> by quadrature over the conditional fluctuations.
  for (int j = 0; j < pe; ++j) {
    const Vector x = x_eval.col(j);
    const Vector k0p = k0_pinv * d.k0(x);
    double diag = 0.0;
    for (const SigmoidalBranch& br : sol.branches) {
      const double mu = k0p.dot(br.z);
      const double var = sol.sigma1_2 * tm.gap[j];
      diag += br.weight * gauss_hermite_expect(
                              [](double zz) {
                                const double p = erf_sigmoid(zz);
                                return p * p;
                              },
                              mu, var, rule);
    }
    k(j, j) = diag;
  }
  return k;
}

}  // namespace nonlazy
