#include "nonlazy/analysis.hpp"

#include "nonlazy/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nonlazy {

std::string to_string(SchemeLabel label) {
  switch (label) {
    case SchemeLabel::Analog: return "analog";
    case SchemeLabel::Redundant: return "redundant";
    case SchemeLabel::Sparse: return "sparse";
  }
  return "?";
}

CodeAssignment extract_codes(const Matrix& activations,
                             const std::vector<int>& labels, double threshold) {
  if (threshold <= 0.0 || threshold >= 1.0) {
    throw std::invalid_argument("code threshold must lie in (0, 1)");
  }
  const int n = static_cast<int>(activations.rows());
  const int p = static_cast<int>(activations.cols());
  if (static_cast<int>(labels.size()) != p) {
    throw std::invalid_argument("labels must match activation columns");
  }
  const int m = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;

  CodeAssignment ca;
  ca.threshold = threshold;
  ca.class_means = Matrix::Zero(n, m);
  Vector counts = Vector::Zero(m);
  for (int mu = 0; mu < p; ++mu) counts[labels[mu]] += 1.0;
  for (int mu = 0; mu < p; ++mu) {
    ca.class_means.col(labels[mu]) += activations.col(mu) / counts[labels[mu]];
  }

  const double global_max = ca.class_means.maxCoeff();
  ca.codes.resize(n);
  if (global_max <= 0.0) return ca;  // silent population: all codes empty
  const double cut = threshold * global_max;
  for (int i = 0; i < n; ++i) {
    for (int r = 0; r < m; ++r) {
      if (ca.class_means(i, r) >= cut) ca.codes[i].active.push_back(r);
    }
  }
  return ca;
}

SchemeSummary classify_scheme(const CodeAssignment& ca, int m) {
  SchemeSummary s;
  const int n = static_cast<int>(ca.codes.size());
  int coded = 0;
  for (const CodePattern& c : ca.codes) {
    s.histogram[c.to_string(m)] += 1;
    if (!c.active.empty()) ++coded;
  }
  s.coding_fraction = n > 0 ? double(coded) / n : 0.0;

  double sum_sq = 0.0;
  const std::string empty_code(m, '0');
  for (const auto& [code, count] : s.histogram) {
    if (code == empty_code) continue;
    const double q = coded > 0 ? double(count) / coded : 0.0;
    sum_sq += q * q;
  }
  s.participation_ratio = sum_sq > 0.0 ? 1.0 / sum_sq : 0.0;

  std::vector<double> pooled(ca.class_means.data(),
                             ca.class_means.data() + ca.class_means.size());
  s.dip_p_value = dip_p_value(pooled);

  bool sparse = coded > 0 && s.coding_fraction < 0.05;
  bool redundant = coded > 0 && s.coding_fraction > 0.5;
  for (const auto& [code, count] : s.histogram) {
    if (code == empty_code) continue;
    if (count > 0.02 * n) sparse = false;
    if (count < 0.05 * n) redundant = false;
  }

  if (coded == 0) {
    s.label = SchemeLabel::Analog;
  } else if (sparse) {
    s.label = SchemeLabel::Sparse;
  } else if (redundant) {
    s.label = SchemeLabel::Redundant;
  } else if (s.dip_p_value >= 0.01) {
    s.label = SchemeLabel::Analog;  // no significant bimodal gap
  } else {
    s.label = s.coding_fraction >= 0.5 ? SchemeLabel::Redundant : SchemeLabel::Sparse;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Dip-style unimodality deviation. Lower convex / upper concave hulls of the
// empirical CDF over the full range; the statistic is half the smallest over
// mode positions of the larger one-sided hull deviation.

namespace {

struct HullDeviation {
  std::vector<double> dev;  // per sorted index
};

// Lower convex hull of (x_i, i/n); deviation F - hull at each point.
std::vector<double> lower_hull_dev(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  std::vector<int> hull;
  auto cross_ok = [&](int a, int b, int c) {
    // keep hull convex: slope(a,b) <= slope(b,c)
    const double lhs = (double(b - a)) * (x[c] - x[b]);
    const double rhs = (double(c - b)) * (x[b] - x[a]);
    return lhs <= rhs;
  };
  for (int i = 0; i < n; ++i) {
    while (hull.size() >= 2 &&
           !cross_ok(hull[hull.size() - 2], hull.back(), i)) {
      hull.pop_back();
    }
    hull.push_back(i);
  }
  std::vector<double> dev(n, 0.0);
  std::size_t seg = 0;
  for (int i = 0; i < n; ++i) {
    while (seg + 1 < hull.size() && hull[seg + 1] < i) ++seg;
    const int a = hull[seg];
    const int b = hull[std::min(seg + 1, hull.size() - 1)];
    double hull_val;
    if (a == b || x[b] == x[a]) {
      hull_val = double(a + 1) / n;
    } else {
      const double w = (x[i] - x[a]) / (x[b] - x[a]);
      hull_val = (double(a + 1) + w * double(b - a)) / n;
    }
    dev[i] = double(i + 1) / n - hull_val;
  }
  return dev;
}

}  // namespace

double dip_statistic(std::vector<double> values) {
  const int n = static_cast<int>(values.size());
  if (n < 4) return 0.0;
  std::sort(values.begin(), values.end());
  if (values.front() == values.back()) return 0.0;

  const std::vector<double> dev_lower = lower_hull_dev(values);
  // Upper concave hull via reflection.
  std::vector<double> reflected(n);
  for (int i = 0; i < n; ++i) reflected[i] = -values[n - 1 - i];
  const std::vector<double> dev_upper_rev = lower_hull_dev(reflected);

  std::vector<double> sup_left(n), sup_right(n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc = std::max(acc, dev_lower[i]);
    sup_left[i] = acc;
  }
  acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc = std::max(acc, dev_upper_rev[i]);
    sup_right[n - 1 - i] = acc;
  }
  double best = std::numeric_limits<double>::infinity();
  for (int mode = 0; mode < n; ++mode) {
    best = std::min(best, std::max(sup_left[mode], sup_right[mode]));
  }
  return 0.5 * best;
}

double dip_p_value(const std::vector<double>& values, int n_replicates,
                   std::uint64_t seed) {
  const double observed = dip_statistic(values);
  if (values.size() < 4) return 1.0;
  Rng rng(seed);
  int exceed = 0;
  std::vector<double> null_sample(values.size());
  for (int rep = 0; rep < n_replicates; ++rep) {
    for (double& v : null_sample) v = rng.uniform();
    if (dip_statistic(null_sample) >= observed) ++exceed;
  }
  return (exceed + 1.0) / (n_replicates + 1.0);
}

// ---------------------------------------------------------------------------

Matrix empirical_kernel(const Matrix& activations) {
  const int n = static_cast<int>(activations.rows());
  return (activations.transpose() * activations) / double(n);
}

Matrix empirical_kernel(const std::vector<Matrix>& activation_chain) {
  if (activation_chain.empty()) throw std::invalid_argument("empty chain");
  Matrix acc = empirical_kernel(activation_chain[0]);
  for (std::size_t i = 1; i < activation_chain.size(); ++i) {
    acc += empirical_kernel(activation_chain[i]);
  }
  return acc / double(activation_chain.size());
}

GenError generalization_error(const std::vector<Matrix>& predictions,
                              const Matrix& targets) {
  const int s = static_cast<int>(predictions.size());
  if (s < 2) {
    throw std::invalid_argument(
        "generalization_error: need >= 2 samples for the variance part");
  }
  const int pt = static_cast<int>(targets.rows());
  const int m = static_cast<int>(targets.cols());
  Matrix mean = Matrix::Zero(pt, m);
  for (const Matrix& f : predictions) mean += f;
  mean /= s;

  GenError err;
  err.bias = Vector::Zero(m);
  err.variance = Vector::Zero(m);
  for (int r = 0; r < m; ++r) {
    err.bias[r] = (targets.col(r) - mean.col(r)).squaredNorm() / pt;
  }
  for (const Matrix& f : predictions) {
    for (int r = 0; r < m; ++r) {
      err.variance[r] += (f.col(r) - mean.col(r)).squaredNorm() / (double(pt) * s);
    }
  }
  err.total = err.bias + err.variance;
  return err;
}

double compare_kernels(const Matrix& k_theory, const Matrix& k_empirical) {
  if (k_theory.rows() != k_empirical.rows() ||
      k_theory.cols() != k_empirical.cols()) {
    throw std::invalid_argument("compare_kernels: shape mismatch");
  }
  return (k_theory - k_empirical).norm() / k_theory.norm();
}

// ---------------------------------------------------------------------------

Clustering kmeans_rows(const Matrix& rows, int k, std::uint64_t seed,
                       int iterations) {
  const int n = static_cast<int>(rows.rows());
  const int dim = static_cast<int>(rows.cols());
  if (k < 1 || k > n) throw std::invalid_argument("kmeans_rows: bad k");
  Rng rng(seed);

  // k-means++ seeding.
  Clustering cl;
  cl.centers = Matrix(k, dim);
  std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
  int first = static_cast<int>(rng.next_u64() % n);
  cl.centers.row(0) = rows.row(first);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d2 = (rows.row(i) - cl.centers.row(c - 1)).squaredNorm();
      dist2[i] = std::min(dist2[i], d2);
      total += dist2[i];
    }
    double target = rng.uniform() * total;
    int pick = n - 1;
    for (int i = 0; i < n; ++i) {
      target -= dist2[i];
      if (target <= 0.0) {
        pick = i;
        break;
      }
    }
    cl.centers.row(c) = rows.row(pick);
  }

  cl.assignment.assign(n, 0);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d2 = (rows.row(i) - cl.centers.row(c)).squaredNorm();
        if (d2 < best_d) {
          best_d = d2;
          best = c;
        }
      }
      if (cl.assignment[i] != best) {
        cl.assignment[i] = best;
        changed = true;
      }
    }
    Matrix sums = Matrix::Zero(k, dim);
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      sums.row(cl.assignment[i]) += rows.row(i);
      counts[cl.assignment[i]] += 1;
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) cl.centers.row(c) = sums.row(c) / counts[c];
    }
    if (!changed && it > 0) break;
  }
  cl.fractions.assign(k, 0.0);
  for (int i = 0; i < n; ++i) cl.fractions[cl.assignment[i]] += 1.0 / n;
  return cl;
}

std::vector<int> match_rows(const Matrix& centers, const Matrix& atoms) {
  const int k = static_cast<int>(centers.rows());
  if (atoms.rows() != k) throw std::invalid_argument("match_rows: count mismatch");
  if (k > 8) throw std::invalid_argument("match_rows: too many rows for exact search");
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (int c = 0; c < k; ++c) {
      cost += (centers.row(c) - atoms.row(perm[c])).norm();
    }
    if (cost < best_cost) {
      best_cost = cost;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace nonlazy
