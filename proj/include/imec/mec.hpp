#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <vector>

#include <nlohmann/json.hpp>

#include "imec/error.hpp"
#include "imec/prob.hpp"

namespace imec {

// Residual mass at or below this is treated as exhausted by the greedy.
inline constexpr double kResidualThreshold = 1e-12;

struct CouplingEntry {
  std::uint32_t row;  // index into left marginal support
  std::uint32_t col;  // index into right marginal support
  double mass;

  friend bool operator==(const CouplingEntry&, const CouplingEntry&) = default;
};

/// Joint distribution over (left index, right index), stored as its nonzero
/// cells. Entries appear in the order the builder emitted them.
class SparseCoupling {
public:
  SparseCoupling() = default;
  SparseCoupling(Categorical left, Categorical right, std::vector<CouplingEntry> entries)
      : left_(std::move(left)), right_(std::move(right)), entries_(std::move(entries)) {}

  const Categorical& left() const noexcept { return left_; }
  const Categorical& right() const noexcept { return right_; }
  const std::vector<CouplingEntry>& entries() const noexcept { return entries_; }
  std::vector<CouplingEntry>& mutable_entries() noexcept { return entries_; }

  double entropy() const noexcept {
    double h = 0.0;
    for (const auto& e : entries_)
      if (e.mass > 0.0) h -= e.mass * std::log2(e.mass);
    return h;
  }

  std::vector<double> row_sums() const {
    std::vector<double> sums(left_.size(), 0.0);
    for (const auto& e : entries_) sums[e.row] += e.mass;
    return sums;
  }

  std::vector<double> col_sums() const {
    std::vector<double> sums(right_.size(), 0.0);
    for (const auto& e : entries_) sums[e.col] += e.mass;
    return sums;
  }

  friend bool operator==(const SparseCoupling&, const SparseCoupling&) = default;

private:
  Categorical left_;
  Categorical right_;
  std::vector<CouplingEntry> entries_;
};

namespace detail {

struct ResidualItem {
  double mass;
  std::uint32_t index;
};

// Max-heap order: larger mass first, equal masses resolved toward the lower
// index.
struct ResidualLess {
  bool operator()(const ResidualItem& a, const ResidualItem& b) const noexcept {
    if (a.mass != b.mass) return a.mass < b.mass;
    return a.index > b.index;
  }
};

using ResidualHeap = std::priority_queue<ResidualItem, std::vector<ResidualItem>, ResidualLess>;

// Max-queue over one marginal's residuals. The untouched masses are consumed
// from a sorted array; only partially used masses go through the heap, which
// stays small. Pops in exactly the order of a single heap over everything.
class ResidualQueue {
public:
  explicit ResidualQueue(const Categorical& d) {
    sorted_.reserve(d.size());
    for (std::size_t i = 0; i < d.size(); ++i)
      sorted_.push_back({d.prob(i), static_cast<std::uint32_t>(i)});
    auto descending = [](const ResidualItem& a, const ResidualItem& b) { return ResidualLess{}(b, a); };
    if (!std::is_sorted(sorted_.begin(), sorted_.end(), descending))
      std::sort(sorted_.begin(), sorted_.end(), descending);
  }

  bool empty() const noexcept { return next_ == sorted_.size() && partial_.empty(); }

  ResidualItem pop() {
    if (next_ < sorted_.size() && (partial_.empty() || !ResidualLess{}(sorted_[next_], partial_.top())))
      return sorted_[next_++];
    ResidualItem top = partial_.top();
    partial_.pop();
    return top;
  }

  void push(ResidualItem item) { partial_.push(item); }

private:
  std::vector<ResidualItem> sorted_;
  std::size_t next_ = 0;
  ResidualHeap partial_;
};

}  // namespace detail

/// Greedy approximate minimum entropy coupling: repeatedly pair the largest
/// residual of each marginal and move their minimum into the joint.
/// Within one bit of the optimum; O((n + m) log(n + m)).
inline SparseCoupling greedy_mec(const Categorical& p, const Categorical& q) {
  detail::ResidualQueue rp(p);
  detail::ResidualQueue rq(q);
  std::vector<CouplingEntry> entries;
  entries.reserve(p.size() + q.size());

  while (!rp.empty() && !rq.empty()) {
    auto a = rp.pop();
    auto b = rq.pop();
    double w = std::min(a.mass, b.mass);
    entries.push_back({a.index, b.index, w});
    double ra = std::max(a.mass - w, 0.0);
    double rb = std::max(b.mass - w, 0.0);
    if (ra > kResidualThreshold) rp.push({ra, a.index});
    if (rb > kResidualThreshold) rq.push({rb, b.index});
  }
  return SparseCoupling(p, q, std::move(entries));
}

inline constexpr std::size_t kExactMecMaxSupport = 4;

/// Exact minimum entropy coupling for supports of at most four symbols.
/// Joint entropy is concave, so the minimum sits at a vertex of the
/// transportation polytope; every vertex has a spanning-tree basis, and all
/// such bases are enumerated.
inline SparseCoupling exact_mec(const Categorical& p, const Categorical& q) {
  const std::size_t n = p.size();
  const std::size_t m = q.size();
  if (n > kExactMecMaxSupport || m > kExactMecMaxSupport)
    throw Error("instance-too-large", "exact_mec supports at most 4x4 instances");

  const std::size_t cells = n * m;
  const std::size_t basis = n + m - 1;
  std::vector<double> best;
  double best_h = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> pick(basis);
  for (std::size_t i = 0; i < basis; ++i) pick[i] = i;

  std::vector<double> values(cells);
  std::vector<double> row_left(n), col_left(m);
  std::vector<bool> in_basis(cells), assigned(cells);

  auto try_basis = [&]() {
    std::fill(in_basis.begin(), in_basis.end(), false);
    std::fill(assigned.begin(), assigned.end(), false);
    std::fill(values.begin(), values.end(), 0.0);
    for (std::size_t c : pick) in_basis[c] = true;
    for (std::size_t r = 0; r < n; ++r) row_left[r] = p.prob(r);
    for (std::size_t c = 0; c < m; ++c) col_left[c] = q.prob(c);

    // Peel leaves: a row or column with exactly one unassigned basis cell
    // determines that cell. A spanning tree peels completely; anything else
    // stalls and is rejected.
    for (std::size_t solved = 0; solved < basis;) {
      bool progress = false;
      for (std::size_t r = 0; r < n && !progress; ++r) {
        std::size_t count = 0, last = 0;
        for (std::size_t c = 0; c < m; ++c)
          if (in_basis[r * m + c] && !assigned[r * m + c]) ++count, last = c;
        if (count == 1) {
          std::size_t cell = r * m + last;
          values[cell] = row_left[r];
          col_left[last] -= row_left[r];
          row_left[r] = 0.0;
          assigned[cell] = true;
          progress = true;
        }
      }
      for (std::size_t c = 0; c < m && !progress; ++c) {
        std::size_t count = 0, last = 0;
        for (std::size_t r = 0; r < n; ++r)
          if (in_basis[r * m + c] && !assigned[r * m + c]) ++count, last = r;
        if (count == 1) {
          std::size_t cell = last * m + c;
          values[cell] = col_left[c];
          row_left[last] -= col_left[c];
          col_left[c] = 0.0;
          assigned[cell] = true;
          progress = true;
        }
      }
      if (!progress) return;
      ++solved;
    }
    for (double r : row_left)
      if (std::abs(r) > 1e-9) return;
    for (double c : col_left)
      if (std::abs(c) > 1e-9) return;
    double h = 0.0;
    for (double v : values) {
      if (v < -1e-12) return;
      if (v > 0.0) h -= v * std::log2(v);
    }
    if (h < best_h) {
      best_h = h;
      best = values;
    }
  };

  // Lexicographic enumeration of basis-sized cell subsets.
  while (true) {
    try_basis();
    std::size_t k = basis;
    while (k > 0 && pick[k - 1] == cells - basis + (k - 1)) --k;
    if (k == 0) break;
    ++pick[k - 1];
    for (std::size_t i = k; i < basis; ++i) pick[i] = pick[i - 1] + 1;
  }

  std::vector<CouplingEntry> entries;
  for (std::size_t cell = 0; cell < cells; ++cell)
    if (best[cell] > kResidualThreshold)
      entries.push_back({static_cast<std::uint32_t>(cell / m), static_cast<std::uint32_t>(cell % m),
                         best[cell]});
  return SparseCoupling(p, q, std::move(entries));
}

/// Distribution of the right variable given left index `row`, over the right
/// marginal's token ids.
inline Categorical row_conditional(const SparseCoupling& g, std::size_t row) {
  std::vector<TokenId> ids;
  std::vector<double> mass;
  for (const auto& e : g.entries()) {
    if (e.row != row || e.mass <= 0.0) continue;
    ids.push_back(g.right().id(e.col));
    mass.push_back(e.mass);
  }
  if (ids.empty()) throw Error("zero-row", "row " + std::to_string(row) + " carries no mass");
  return Categorical(std::move(ids), std::move(mass));
}

/// Distribution of the left variable given right index `col`, over the left
/// marginal's token ids.
inline Categorical col_conditional(const SparseCoupling& g, std::size_t col) {
  std::vector<TokenId> ids;
  std::vector<double> mass;
  for (const auto& e : g.entries()) {
    if (e.col != col || e.mass <= 0.0) continue;
    ids.push_back(g.left().id(e.row));
    mass.push_back(e.mass);
  }
  if (ids.empty()) throw Error("zero-col", "column " + std::to_string(col) + " carries no mass");
  return Categorical(std::move(ids), std::move(mass));
}

inline nlohmann::json to_json(const SparseCoupling& g) {
  auto entries = nlohmann::json::array();
  for (const auto& e : g.entries()) entries.push_back({e.row, e.col, e.mass});
  return {{"entries", std::move(entries)}};
}

}  // namespace imec
