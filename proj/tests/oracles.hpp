#pragma once

// Independent reference computations for tests. Nothing here calls into the
// code paths being checked.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

inline double entropy_bits(const std::vector<double>& p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0) h += x * std::log(1.0 / x) / std::log(2.0);
  return h;
}

/// Minimum joint entropy of a 2x2 coupling by scanning its one free
/// parameter (the top-left cell) at the given step.
inline double min_entropy_2x2(double p0, double q0, double step = 1e-6) {
  const double p1 = 1 - p0, q1 = 1 - q0;
  const double lo = std::max(0.0, p0 - q1), hi = std::min(p0, q0);
  double best = std::numeric_limits<double>::infinity();
  for (double a = lo; a <= hi + 1e-15; a += step) {
    double cells[4] = {a, p0 - a, q0 - a, p1 - q0 + a};
    (void)q1;
    double h = 0.0;
    for (double c : cells)
      if (c > 1e-15) h -= c * std::log2(c);
    best = std::min(best, h);
  }
  // Both endpoints exactly.
  for (double a : {lo, hi}) {
    double cells[4] = {a, p0 - a, q0 - a, p1 - q0 + a};
    double h = 0.0;
    for (double c : cells)
      if (c > 1e-15) h -= c * std::log2(c);
    best = std::min(best, h);
  }
  return best;
}

/// Random point of the transportation polytope for marginals p, q, built by
/// a randomized north-west-corner fill followed by mass-preserving swaps.
inline std::vector<std::vector<double>> random_coupling(const std::vector<double>& p, const std::vector<double>& q,
                                                        std::mt19937_64& gen) {
  const std::size_t n = p.size(), m = q.size();
  std::vector<std::vector<double>> c(n, std::vector<double>(m, 0.0));
  // Independent coupling, then random 2x2 cycle perturbations keep marginals.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) c[i][j] = p[i] * q[j];
  if (n < 2 || m < 2) return c;
  std::uniform_int_distribution<std::size_t> ri(0, n - 1), rj(0, m - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int it = 0; it < 200; ++it) {
    std::size_t i1 = ri(gen), i2 = ri(gen), j1 = rj(gen), j2 = rj(gen);
    if (i1 == i2 || j1 == j2) continue;
    // Move t from (i1,j2),(i2,j1) onto (i1,j1),(i2,j2) or the reverse.
    if (u(gen) < 0.5) {
      double t = std::min(c[i1][j2], c[i2][j1]) * u(gen);
      c[i1][j1] += t, c[i2][j2] += t, c[i1][j2] -= t, c[i2][j1] -= t;
    } else {
      double t = std::min(c[i1][j1], c[i2][j2]) * u(gen);
      c[i1][j1] -= t, c[i2][j2] -= t, c[i1][j2] += t, c[i2][j1] += t;
    }
  }
  return c;
}

inline double joint_entropy(const std::vector<std::vector<double>>& c) {
  double h = 0.0;
  for (const auto& row : c)
    for (double x : row)
      if (x > 1e-15) h -= x * std::log2(x);
  return h;
}

/// Pearson chi-square statistic of counts against expected probabilities.
inline double chi_square(const std::vector<std::size_t>& counts, const std::vector<double>& probs) {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  double stat = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double e = probs[i] * static_cast<double>(n);
    stat += (static_cast<double>(counts[i]) - e) * (static_cast<double>(counts[i]) - e) / e;
  }
  return stat;
}

/// Random probability vector of length n with strictly positive entries.
inline std::vector<double> random_probs(std::size_t n, std::mt19937_64& gen) {
  std::exponential_distribution<double> ex(1.0);
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& x : p) s += (x = ex(gen) + 1e-6);
  for (auto& x : p) x /= s;
  return p;
}

}  // namespace oracle
