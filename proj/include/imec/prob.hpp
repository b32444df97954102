#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "imec/error.hpp"

namespace imec {

using TokenId = std::uint32_t;

// Masses below this are dropped at construction and the rest renormalized.
inline constexpr double kPruneThreshold = 1e-12;
// Allowed |sum - 1| for a constructed distribution.
inline constexpr double kNormTolerance = 1e-9;
// Inputs whose total is this close to 1 are not rescaled.
inline constexpr double kRenormalizeSlack = 1e-12;

/// Finite distribution over token ids. Support is sorted by id, ids are
/// unique, every stored probability is strictly positive.
class Categorical {
public:
  Categorical() = default;

  /// Builds from parallel id/probability arrays. Duplicate ids are merged,
  /// entries below kPruneThreshold are pruned, the remainder renormalized.
  Categorical(std::vector<TokenId> ids, std::vector<double> probs) {
    if (ids.size() != probs.size())
      throw Error("invalid-distribution", "ids and probs differ in length");
    for (double p : probs)
      if (!std::isfinite(p) || p < 0.0)
        throw Error("invalid-distribution", "probability must be finite and non-negative");
    if (std::adjacent_find(ids.begin(), ids.end(), std::greater_equal<>{}) == ids.end()) {
      assign_pruned(std::move(ids), std::move(probs));
      return;
    }
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

    std::vector<TokenId> merged_ids;
    std::vector<double> merged;
    merged_ids.reserve(ids.size());
    merged.reserve(ids.size());
    for (std::size_t k : order) {
      double p = probs[k];
      if (!merged_ids.empty() && merged_ids.back() == ids[k]) {
        merged.back() += p;
      } else {
        merged_ids.push_back(ids[k]);
        merged.push_back(p);
      }
    }
    assign_pruned(std::move(merged_ids), std::move(merged));
  }

  /// Uniform distribution over ids 0..k-1.
  static Categorical uniform(std::size_t k) {
    if (k == 0) throw Error("invalid-distribution", "uniform over empty support");
    std::vector<TokenId> ids(k);
    std::iota(ids.begin(), ids.end(), TokenId{0});
    return Categorical(std::move(ids), std::vector<double>(k, 1.0 / static_cast<double>(k)));
  }

  static Categorical point_mass(TokenId id) { return Categorical({id}, {1.0}); }

  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  std::span<const TokenId> ids() const noexcept { return ids_; }
  std::span<const double> probs() const noexcept { return probs_; }
  TokenId id(std::size_t i) const { return ids_[i]; }
  double prob(std::size_t i) const { return probs_[i]; }

  /// Position of `id` in the support, or size() when absent.
  std::size_t index_of(TokenId id) const noexcept {
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) return ids_.size();
    return static_cast<std::size_t>(it - ids_.begin());
  }

  bool contains(TokenId id) const noexcept { return index_of(id) != ids_.size(); }

  /// Probability of `id`; zero outside the support.
  double mass(TokenId id) const noexcept {
    std::size_t i = index_of(id);
    return i == ids_.size() ? 0.0 : probs_[i];
  }

  friend bool operator==(const Categorical&, const Categorical&) = default;

private:
  void assign_pruned(std::vector<TokenId> ids, std::vector<double> probs) {
    double total = 0.0;
    for (double p : probs) total += p;
    if (!(total > 0.0)) throw Error("invalid-distribution", "distribution has no mass");

    // Pruning is relative to the normalized mass so that unnormalized inputs
    // (e.g. rows of a coupling) behave like their normalized form.
    std::size_t out = 0;
    double kept = 0.0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (probs[i] / total < kPruneThreshold) continue;
      ids[out] = ids[i];
      probs[out] = probs[i];
      kept += probs[i];
      ++out;
    }
    ids.resize(out);
    probs.resize(out);
    if (out == 0) throw Error("invalid-distribution", "all mass pruned");
    // Already-normalized input is kept bit-for-bit, so rebuilding a
    // distribution from its own probabilities is the identity.
    if (std::abs(kept - 1.0) > kRenormalizeSlack)
      for (double& p : probs) p /= kept;
    ids_ = std::move(ids);
    probs_ = std::move(probs);
  }

  std::vector<TokenId> ids_;
  std::vector<double> probs_;
};

/// SplitMix64: a counter-based generator. The n-th output is a fixed
/// bijective mix of seed + n * 0x9e3779b97f4a7c15, so streams are identical
/// on every platform for a given seed.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed), counter_(0) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    std::uint64_t z = seed_ + counter_ * 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bit() noexcept { return (next_u64() >> 63) != 0; }

  /// Independent child stream, e.g. one per trial.
  Rng split(std::uint64_t stream) const noexcept {
    Rng mixer(seed_ ^ (stream * 0xd1b54a32d192ed03ULL + 0x2545f4914f6cdd1dULL));
    return Rng(mixer.next_u64());
  }

private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

/// Shannon entropy in bits.
inline double entropy(std::span<const double> probs) noexcept {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log2(p);
  return h;
}

inline double entropy(const Categorical& d) noexcept { return entropy(d.probs()); }

/// KL(p || q) in bits. Requires support(p) within support(q).
inline double kl(const Categorical& p, const Categorical& q) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double qm = q.mass(p.id(i));
    if (qm <= 0.0)
      throw Error("kl-undefined", "token " + std::to_string(p.id(i)) + " has no mass under q");
    total += p.prob(i) * std::log2(p.prob(i) / qm);
  }
  return total;
}

/// Audit variant of kl: a support violation yields +infinity instead of
/// throwing.
inline double kl_or_infinity(const Categorical& p, const Categorical& q) noexcept {
  try {
    return kl(p, q);
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
}

/// Inverse-CDF draw over the support in ascending id order.
inline TokenId sample(const Categorical& d, Rng& rng) {
  double u = rng.uniform();
  double cumulative = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    cumulative += d.prob(i);
    if (u < cumulative) return d.id(i);
  }
  return d.id(d.size() - 1);
}

inline nlohmann::json to_json(const Categorical& d) {
  return {{"ids", std::vector<TokenId>(d.ids().begin(), d.ids().end())},
          {"probs", std::vector<double>(d.probs().begin(), d.probs().end())}};
}

inline Categorical categorical_from_json(const nlohmann::json& j) {
  try {
    return Categorical(j.at("ids").get<std::vector<TokenId>>(),
                       j.at("probs").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid-distribution", std::string("malformed categorical: ") + e.what());
  }
}

}  // namespace imec
