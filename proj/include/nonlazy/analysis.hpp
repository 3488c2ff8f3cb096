#pragma once

// Coding-scheme extraction and theory-vs-sampling comparison: per-neuron
// codes from class-mean activations, scheme classification, empirical
// kernels, generalization error decomposition, readout clustering.

#include "nonlazy/numerics.hpp"
#include "nonlazy/sigmoidal.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace nonlazy {

struct CodeAssignment {
  std::vector<CodePattern> codes;  // one per neuron, possibly empty
  Matrix class_means;              // N x m mean activation per class
  double threshold = 0.5;
};

// Per-neuron class-mean postactivations, thresholded relative to the global
// max entry. Nonpositive global max leaves every code empty.
CodeAssignment extract_codes(const Matrix& activations,  // N x P
                             const std::vector<int>& labels, double threshold);

enum class SchemeLabel { Analog, Redundant, Sparse };
std::string to_string(SchemeLabel label);

struct SchemeSummary {
  std::map<std::string, int> histogram;  // code string -> neuron count
  double coding_fraction = 0.0;          // neurons with a nonempty code
  double participation_ratio = 0.0;      // effective number of used codes
  double dip_p_value = 1.0;              // pooled class-mean bimodality
  SchemeLabel label = SchemeLabel::Analog;
};

// Classification thresholds are artifact constants: sparse needs coding
// fraction < 0.05 with every code count <= 0.02 N; redundant needs every
// nonempty code count >= 0.05 N and coding fraction > 0.5; otherwise the
// label follows the bimodality of the pooled class means (analog when the
// dip test finds none at p < 0.01).
SchemeSummary classify_scheme(const CodeAssignment& ca, int m);

// Maximal deviation of the empirical CDF from its nearest unimodal hull fit
// (dip-style statistic, halved sup-norm).
double dip_statistic(std::vector<double> values);

// Monte-Carlo p-value of dip_statistic against a uniform null.
double dip_p_value(const std::vector<double>& values, int n_replicates = 500,
                   std::uint64_t seed = 2024);

// (1/N) Phi^T Phi on postactivations; the chain overload averages over
// checkpoints.
Matrix empirical_kernel(const Matrix& activations);
Matrix empirical_kernel(const std::vector<Matrix>& activation_chain);

struct GenError {
  Vector total;     // per class; equals bias + variance exactly
  Vector bias;
  Vector variance;
};

// Bias-variance decomposition over a chain of predictions (each P* x m).
GenError generalization_error(const std::vector<Matrix>& predictions,
                              const Matrix& targets);

// Relative Frobenius distance |A - B|_F / |A|_F.
double compare_kernels(const Matrix& k_theory, const Matrix& k_empirical);

// Seeded k-means (k-means++ init) over rows; used to match sampled readouts
// to theory branch atoms.
struct Clustering {
  Matrix centers;               // k x dim
  std::vector<int> assignment;  // per row
  std::vector<double> fractions;
};
Clustering kmeans_rows(const Matrix& rows, int k, std::uint64_t seed,
                       int iterations = 100);

// Best assignment of cluster centers to branch atoms (minimal total distance
// over permutations; k <= 8). Returns atom index per cluster.
std::vector<int> match_rows(const Matrix& centers, const Matrix& atoms);

}  // namespace nonlazy
