#pragma once

// Empirical posterior exploration by Langevin dynamics or noiseless gradient
// descent on U(Theta) = (N/T) L(Theta) + sum_g |theta_g|^2 / (2 sigma_g^2),
// the rescaled-temperature log posterior, for any depth and nonlinearity.

#include "nonlazy/dataset.hpp"
#include "nonlazy/numerics.hpp"
#include "nonlazy/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nonlazy {

struct NetworkArch {
  int depth = 1;   // L
  int width = 0;   // N
  int n0 = 0;
  int m = 0;
  Nonlinearity nonlinearity = Nonlinearity::ErfSigmoid;
  double sigma_a2 = 0.0;         // <= 0: default P^{-1/L} (linear/relu), 1/P (sigmoid)
  std::vector<double> sigma_l2;  // defaults to 1 per layer
  bool lazy = false;             // readout scale 1/sqrt(N) instead of 1/N

  double sigma2(int l) const { return sigma_l2.empty() ? 1.0 : sigma_l2.at(l); }
  double readout_sigma_a2(int p) const;
};

struct WeightState {
  std::vector<Matrix> w;  // w[0]: N x N0, w[l >= 1]: N x N
  Matrix a;               // N x m

  WeightState& operator+=(const WeightState& other);
  WeightState& scale(double s);
  int parameter_count() const;
};

WeightState init_from_prior(const NetworkArch& arch, const Dataset& d,
                            std::uint64_t seed);

struct Activations {
  std::vector<Matrix> pre;   // per layer, N x P_eval
  std::vector<Matrix> post;  // phi applied
};

Activations activations(const WeightState& state, const NetworkArch& arch,
                        const Matrix& x_eval);

// Network outputs, one row per eval input (P_eval x m).
Matrix network_output(const WeightState& state, const NetworkArch& arch,
                      const Matrix& x_eval);

struct Potential {
  double value = 0.0;  // (N/T) loss + regularizer
  double loss = 0.0;   // (1/2) sum_r,mu (y - f)^2
  double reg = 0.0;
  WeightState grad;
};

// Analytic gradient of U; `prior_only` drops the loss term (the T -> inf
// limit), leaving grad = theta / sigma^2 per group.
Potential potential_and_gradient(const WeightState& state, const Dataset& d,
                                 const NetworkArch& arch, double temperature,
                                 bool prior_only = false);

struct SampleChain {
  std::vector<WeightState> states;
  std::vector<std::uint64_t> steps;
  std::vector<double> loss_trace;
  std::vector<double> reg_trace;
  double step_size = 0.0;
  double temperature = 0.0;
  std::uint64_t seed = 0;
};

// Default step at T = 1e-4 keeps h |grad U| small for desk-scale widths.
double default_langevin_step(double temperature);

// theta <- theta - h grad U + sqrt(2 h) xi, checkpoint every `thin` steps
// (the initial state is always recorded). Aborts when the loss diverges.
SampleChain langevin_run(WeightState state, const Dataset& d,
                         const NetworkArch& arch, double temperature,
                         double step, std::uint64_t steps, std::uint64_t thin,
                         std::uint64_t seed);

// Noiseless descent with backtracking (step halves on potential increase);
// the recorded potential trace is non-increasing.
SampleChain gradient_descent_run(WeightState state, const Dataset& d,
                                 const NetworkArch& arch, double temperature,
                                 double step, std::uint64_t steps,
                                 std::uint64_t thin);

// First chain index at which the loss trace has plateaued (change < tol over
// `window` recorded points); falls back to half the chain.
std::size_t burn_in_index(const std::vector<double>& loss_trace,
                          std::size_t window = 20, double tol = 1e-8);

// Chain persistence: a directory with manifest.json plus one binary file per
// checkpoint; runs are resumable from the last checkpoint.
void save_chain(const SampleChain& chain, const NetworkArch& arch,
                std::uint64_t dataset_hash, const std::string& dir);
SampleChain load_chain(const std::string& dir, NetworkArch* arch_out = nullptr,
                       std::uint64_t* dataset_hash_out = nullptr);

}  // namespace nonlazy
