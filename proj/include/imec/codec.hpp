#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imec/channels.hpp"
#include "imec/cipher.hpp"
#include "imec/error.hpp"
#include "imec/mec.hpp"
#include "imec/prob.hpp"

namespace imec {

// A posterior whose entropy is within this of the threshold counts as below
// it, so a threshold equal to the block size ends coupling immediately.
inline constexpr double kThresholdSlack = 1e-12;

struct CodecConfig {
  unsigned block_bits = 10;
  double threshold = 0.1;         // bits
  std::size_t min_tokens = 0;     // pad with plain covertext up to this length
  std::size_t max_tokens = 10000; // cap on coupling steps
};

inline void validate(const CodecConfig& cfg) {
  check_block_bits(cfg.block_bits);
  if (!(cfg.threshold > 0.0)) throw Error("invalid-config", "threshold must be positive");
  if (cfg.max_tokens < cfg.min_tokens)
    throw Error("invalid-config", "max_tokens must be at least min_tokens");
}

/// Belief over the values of one ciphertext block. Only values with
/// nonzero mass are stored.
class BlockPosterior {
public:
  BlockPosterior(std::size_t index, Categorical dist)
      : index_(index), dist_(std::move(dist)), entropy_(imec::entropy(dist_)) {}

  /// Uniform over every block value whose `used_bits` leading bits vary and
  /// whose remaining low bits are the zero padding.
  static BlockPosterior uniform(std::size_t index, unsigned block_bits, unsigned used_bits) {
    const std::size_t count = std::size_t{1} << used_bits;
    const unsigned pad = block_bits - used_bits;
    std::vector<TokenId> ids(count);
    for (std::size_t v = 0; v < count; ++v) ids[v] = static_cast<TokenId>(v << pad);
    return BlockPosterior(index, Categorical(std::move(ids), std::vector<double>(count, 1.0 / static_cast<double>(count))));
  }

  std::size_t index() const noexcept { return index_; }
  const Categorical& dist() const noexcept { return dist_; }
  double entropy() const noexcept { return entropy_; }

  /// Most likely value, ties toward the lowest value.
  std::uint32_t map_value() const noexcept {
    std::size_t best = 0;
    for (std::size_t i = 1; i < dist_.size(); ++i)
      if (dist_.prob(i) > dist_.prob(best)) best = i;
    return dist_.id(best);
  }

  /// True when more than one value attains the maximum.
  bool map_is_tied() const noexcept {
    double top = dist_.prob(0);
    for (std::size_t i = 1; i < dist_.size(); ++i) top = std::max(top, dist_.prob(i));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < dist_.size(); ++i) hits += dist_.prob(i) == top;
    return hits > 1;
  }

  void update(Categorical dist) {
    dist_ = std::move(dist);
    entropy_ = imec::entropy(dist_);
  }

private:
  std::size_t index_;
  Categorical dist_;
  double entropy_;
};

/// Loop state shared by encoder and decoder. After j coupling steps it is a
/// deterministic function of the configuration, the channel and the first j
/// stegotokens, so both sides hold bitwise-identical copies.
class CodecState {
public:
  CodecState(std::size_t bit_length, const CodecConfig& cfg) : cfg_(cfg), bit_length_(bit_length) {
    validate(cfg_);
    if (bit_length == 0) throw Error("invalid-length", "ciphertext length must be positive");
    const std::size_t n = block_count(bit_length, cfg_.block_bits);
    posteriors_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t remaining = bit_length - i * cfg_.block_bits;
      const unsigned used = static_cast<unsigned>(std::min<std::size_t>(remaining, cfg_.block_bits));
      posteriors_.push_back(BlockPosterior::uniform(i, cfg_.block_bits, used));
    }
  }

  const CodecConfig& config() const noexcept { return cfg_; }
  std::size_t bit_length() const noexcept { return bit_length_; }
  std::size_t n_blocks() const noexcept { return posteriors_.size(); }
  std::size_t step() const noexcept { return step_; }
  const std::vector<BlockPosterior>& posteriors() const noexcept { return posteriors_; }
  const BlockPosterior& posterior(std::size_t i) const { return posteriors_.at(i); }

  double max_entropy() const noexcept {
    double h = 0.0;
    for (const auto& p : posteriors_) h = std::max(h, p.entropy());
    return h;
  }

  /// Coupling continues while some block's entropy reaches the threshold.
  bool in_coupling_phase() const noexcept {
    return !(max_entropy() < cfg_.threshold + kThresholdSlack);
  }

  /// Block with the highest posterior entropy, ties toward the lowest index.
  std::size_t select_block() const noexcept {
    std::size_t best = 0;
    for (std::size_t i = 1; i < posteriors_.size(); ++i)
      if (posteriors_[i].entropy() > posteriors_[best].entropy()) best = i;
    return best;
  }

  void commit(std::size_t block, Categorical posterior) {
    posteriors_[block].update(std::move(posterior));
    ++step_;
  }

private:
  CodecConfig cfg_;
  std::size_t bit_length_;
  std::vector<BlockPosterior> posteriors_;
  std::size_t step_ = 0;
};

/// Everything one coupling step produced, handed to observers after the
/// posterior update.
struct StepView {
  std::size_t step;                 // 0-based coupling step
  std::size_t block;                // selected block
  const Categorical& prior;         // block posterior before the step
  const Categorical& channel_dist;  // channel conditional for this token
  const SparseCoupling& coupling;
  TokenId token;
  const Categorical& posterior;     // block posterior after the step
};

struct CodecHooks {
  std::function<void(const StepView&)> on_step;
  // Test-only: rewrites the coupling before it is used.
  std::function<void(SparseCoupling&)> tamper;
};

/// Distribution of the next stegotoken induced by the posterior and the
/// coupling, sum over x of mu(x) * gamma(c | x). Equals the coupling's right
/// marginal whenever the coupling is valid.
inline Categorical stego_marginal(const Categorical& posterior, const SparseCoupling& g) {
  const auto rows = g.row_sums();
  std::vector<double> mass(g.right().size(), 0.0);
  for (const auto& e : g.entries()) {
    if (rows[e.row] <= 0.0) continue;
    mass[e.col] += posterior.mass(g.left().id(e.row)) * e.mass / rows[e.row];
  }
  return Categorical(std::vector<TokenId>(g.right().ids().begin(), g.right().ids().end()), std::move(mass));
}

inline Categorical stego_marginal(const CodecState& state, const SparseCoupling& g) {
  return stego_marginal(state.posterior(state.select_block()).dist(), g);
}

namespace detail {

struct CouplingStep {
  std::size_t block;
  Categorical channel_dist;
  SparseCoupling coupling;
};

inline CouplingStep begin_step(const CodecState& state, Channel& ch, const CodecHooks& hooks) {
  CouplingStep s{state.select_block(), ch.next_dist(), {}};
  s.coupling = greedy_mec(state.posterior(s.block).dist(), s.channel_dist);
  if (hooks.tamper) hooks.tamper(s.coupling);
  return s;
}

inline void finish_step(CodecState& state, Channel& ch, const CodecHooks& hooks, CouplingStep& s,
                        TokenId token, std::size_t col) {
  Categorical posterior = col_conditional(s.coupling, col);
  if (hooks.on_step) {
    const Categorical prior = state.posterior(s.block).dist();
    state.commit(s.block, posterior);
    hooks.on_step(StepView{state.step() - 1, s.block, prior, s.channel_dist, s.coupling, token,
                           state.posterior(s.block).dist()});
  } else {
    state.commit(s.block, std::move(posterior));
  }
  ch.append(token);
}

}  // namespace detail

/// Hides ciphertext `x` in tokens drawn from `ch`. Couples the highest-entropy
/// block posterior with the channel's next-token distribution, samples the
/// token from the row of the true block value, and conditions the posterior
/// on it, until every block posterior is below the threshold. Then emits
/// plain covertext until `min_tokens` is reached.
inline std::vector<TokenId> encode(const Ciphertext& x, Channel& ch, const CodecConfig& cfg, Rng& rng,
                                   const CodecHooks& hooks = {}) {
  if (x.block_bits != cfg.block_bits)
    throw Error("config-mismatch", "ciphertext was packed with a different block size");
  CodecState state(x.bits.size(), cfg);
  std::vector<TokenId> tokens;

  while (state.in_coupling_phase()) {
    if (state.step() >= cfg.max_tokens)
      throw Error("nontermination", "coupling phase exceeded " + std::to_string(cfg.max_tokens) + " tokens");
    auto s = detail::begin_step(state, ch, hooks);
    const std::uint32_t truth = x.blocks[s.block];
    const std::size_t row = s.coupling.left().index_of(truth);
    if (row == s.coupling.left().size())
      throw Error("posterior-collapse", "true value of block " + std::to_string(s.block) + " lost its mass");
    const TokenId token = sample(row_conditional(s.coupling, row), rng);
    const std::size_t col = s.channel_dist.index_of(token);
    detail::finish_step(state, ch, hooks, s, token, col);
    if (!state.posterior(s.block).dist().contains(truth))
      throw Error("posterior-collapse", "true value of block " + std::to_string(s.block) + " lost its mass");
    tokens.push_back(token);
  }

  while (tokens.size() < cfg.min_tokens) {
    const TokenId token = sample(ch.next_dist(), rng);
    ch.append(token);
    tokens.push_back(token);
  }
  return tokens;
}

struct DecodeResult {
  BitString bits;                        // recovered ciphertext, bit_length bits
  std::vector<std::uint32_t> map_values; // per block
  std::vector<double> residual_entropy;  // per block, bits
  std::size_t coupling_tokens = 0;
  // False when a block's maximum is shared by several values, i.e. the
  // tokens carried too little information to pick one.
  bool unambiguous = true;
};

/// Replays the encoder's iteration on observed tokens, conditioning on each
/// instead of sampling, and returns the per-block MAP estimate. Tokens after
/// the point where every posterior fell below the threshold are ignored.
inline DecodeResult decode(std::span<const TokenId> tokens, Channel& ch, const CodecConfig& cfg,
                           std::size_t bit_length, const CodecHooks& hooks = {}) {
  CodecState state(bit_length, cfg);
  std::size_t next = 0;
  while (state.in_coupling_phase()) {
    if (next >= tokens.size())
      throw Error("insufficient-tokens", "stegotext ended after " + std::to_string(tokens.size()) +
                                             " tokens with block entropy " + std::to_string(state.max_entropy()));
    auto s = detail::begin_step(state, ch, hooks);
    const TokenId token = tokens[next++];
    const std::size_t col = s.channel_dist.index_of(token);
    if (col == s.channel_dist.size())
      throw Error("token-outside-support", "token " + std::to_string(token) + " at position " +
                                               std::to_string(next - 1) + " is impossible under the channel");
    detail::finish_step(state, ch, hooks, s, token, col);
  }

  DecodeResult r;
  r.coupling_tokens = state.step();
  for (const auto& p : state.posteriors()) {
    r.map_values.push_back(p.map_value());
    r.residual_entropy.push_back(p.entropy());
    if (p.map_is_tied()) r.unambiguous = false;
  }
  r.bits = unpack_blocks(r.map_values, cfg.block_bits, bit_length);
  return r;
}

// ---------------------------------------------------------------------------
// Stegotext file: {"channel": {...}, "block_bits": B, "threshold": t,
//                  "n_blocks": n, "tokens": [...]}

struct StegoFile {
  ChannelSpec channel;
  unsigned block_bits = 10;
  double threshold = 0.1;
  std::size_t n_blocks = 0;
  std::vector<TokenId> tokens;
};

inline nlohmann::json to_json(const StegoFile& f) {
  return {{"channel", to_json(f.channel)},
          {"block_bits", f.block_bits},
          {"threshold", f.threshold},
          {"n_blocks", f.n_blocks},
          {"tokens", f.tokens}};
}

inline StegoFile stego_file_from_json(const nlohmann::json& j) {
  try {
    StegoFile f;
    f.channel = channel_spec_from_json(j.at("channel"));
    f.block_bits = j.at("block_bits").get<unsigned>();
    f.threshold = j.at("threshold").get<double>();
    f.n_blocks = j.at("n_blocks").get<std::size_t>();
    f.tokens = j.at("tokens").get<std::vector<TokenId>>();
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid-stegotext", std::string("malformed stegotext file: ") + e.what());
  }
}

}  // namespace imec
