#pragma once

// Saddle-point solver for single-hidden-layer erf-sigmoid networks in the
// non-lazy scaling. The readout posterior concentrates on a finite set of
// branch atoms (a_gamma, P_gamma); the conjugate field t and the per-branch
// preactivation statistics are solved jointly from the self-consistency
// system, with branch weights pinned by energy quasi-degeneracy.

#include "nonlazy/dataset.hpp"
#include "nonlazy/numerics.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nonlazy {

// Subset of classes that activate a neuron.
struct CodePattern {
  std::vector<int> active;  // sorted, values in [0, m)

  bool contains(int r) const;
  std::string to_string(int m) const;            // e.g. "110" for m = 3
  static CodePattern from_string(const std::string& bits);
  bool operator==(const CodePattern& other) const { return active == other.active; }
  bool operator<(const CodePattern& other) const { return active < other.active; }
};

std::vector<CodePattern> enumerate_nonempty_codes(int m);

struct SigmoidalBranch {
  Vector a;         // m-dim readout atom
  double weight;    // P_gamma
  Vector z;         // P-dim mean training preactivation
  Vector phi_mean;  // P-dim <phi(z_mu)>
  Vector phi_sq;    // P-dim <phi(z_mu)^2>
};

struct SigmoidalSolution {
  Matrix t;  // P x m conjugate field
  std::vector<SigmoidalBranch> branches;
  std::vector<CodePattern> codes;     // hypothesis
  std::vector<CodePattern> realized;  // codes the branches actually express
  double temperature = 0.0;
  double sigma1_2 = 1.0;
  std::vector<double> branch_energies;  // E(a_gamma | t), per branch
  double energy = 0.0;                  // per-input solution energy e(t)
  double energy_spread = 0.0;           // max - min branch energy
  double residual = 0.0;                // norm of the full P x m saddle system
  bool converged = false;
  bool codes_match = false;  // realized == hypothesis, branch by branch
  bool orthogonal_path = false;
  int p = 0;
  int m = 0;
};

struct SigmoidalOptions {
  double tol = 1e-10;           // solver tolerance on the stacked residual
  int max_iter = 600;
  int quad_order = kDefaultQuadOrder;
  int restarts = 4;             // jittered re-inits before giving up
  double sigma1_2 = 1.0;
  double saturation_g = 8.0;    // initial tilt magnitude imprinting the code
  // Weight of the energy-degeneracy residuals. The branch weights P_gamma
  // are only determined when the branch energies coincide to O(1/P); the
  // degeneracy conditions close the system. The achieved spread is reported
  // on the solution either way.
  double degeneracy_weight = 1.0;
};

// Orthogonal-input reduction (requires K0 == I within 1e-8): unknowns
// collapse to per-class conjugate values and per-branch per-class statistics;
// the 1-D tilted expectations are evaluated by Gauss-Hermite quadrature.
// Each branch readout is anchored to its hypothesized code basin by an inner
// Newton solve; branch weights are the finite-P fractions
// exp(-P E_gamma) / sum exp(-P E). The returned residual is re-evaluated on
// the full P x m system.
SigmoidalSolution solve_orthogonal(const Dataset& d,
                                   const std::vector<CodePattern>& codes,
                                   double temperature, std::uint64_t init_seed,
                                   const SigmoidalOptions& opts = {});

// True when E(a | t) of the solution has a local minimum realizing `code`
// (orthogonal path only). The set of existing basins is the coding scheme a
// frozen sampled population can express.
bool code_basin_exists(const SigmoidalSolution& sol, const Dataset& d,
                       const CodePattern& code,
                       const SigmoidalOptions& opts = {});

// Codes of branches whose posterior fraction exceeds the floor.
std::vector<CodePattern> effective_codes(const SigmoidalSolution& sol,
                                         double weight_floor = 0.01);

struct SigmoidalScheme {
  SigmoidalSolution solution;         // self-consistent solve on the basins
  std::vector<CodePattern> basins;    // every code with an existing basin
};

// Self-consistent coding scheme on an orthogonal task: solve an anchor
// hypothesis, probe all nonempty codes for basins at the solved conjugate
// values, and re-solve on the discovered set until it closes (m <= 4).
SigmoidalScheme discover_scheme(const Dataset& d, double temperature,
                                std::uint64_t init_seed,
                                const SigmoidalOptions& opts = {});

// General-input solver under the ad-hoc delta approximation
// P(z | a_gamma) ~ delta(z - z_gamma): jointly solves the preactivation
// stationarity, the readout equations, and the target equation.
SigmoidalSolution solve_general(const Dataset& d,
                                const std::vector<CodePattern>& codes,
                                double temperature, std::uint64_t init_seed,
                                const SigmoidalOptions& opts = {});

// Per-branch energies E(a_gamma | K0, t) under the approximation the
// solution was computed with.
std::vector<double> branch_energy(const SigmoidalSolution& sol, const Dataset& d);

// Per-input order-parameter energy e(t); ranks alternative code hypotheses
// (lower is more probable, suppression factor exp(-N delta E)).
double solution_energy(const SigmoidalSolution& sol, const Dataset& d);

// Finite-P correction: per-branch readout covariance (1/P) E''(a_gamma)^{-1}
// with E''(a) = I - (1/P) t^T Cov[phi(z)] t. Second member flags branches
// whose Hessian is not positive definite.
struct FinitePCorrection {
  std::vector<Matrix> covariances;
  std::vector<bool> stable;
};
FinitePCorrection finite_p_correction(const SigmoidalSolution& sol, int p);

// Mean predictor f_r(x) = sum_gamma P_gamma a_gamma^r phi(c(x) k0^T K0^+ z_gamma).
Vector predictor(const SigmoidalSolution& sol, const Dataset& d, const Vector& x);
Matrix predictor(const SigmoidalSolution& sol, const Dataset& d, const Matrix& x_test);

// Kernel on training inputs: sum_gamma P_gamma <phi phi^T> with branch means
// off the diagonal and exact second moments on it.
Matrix training_kernel(const SigmoidalSolution& sol);

// Kernel on arbitrary inputs under the train/test decoupling approximation.
Matrix kernel(const SigmoidalSolution& sol, const Dataset& d, const Matrix& x_eval);

}  // namespace nonlazy
