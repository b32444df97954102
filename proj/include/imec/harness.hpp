#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "imec/channels.hpp"
#include "imec/cipher.hpp"
#include "imec/codec.hpp"
#include "imec/error.hpp"
#include "imec/prob.hpp"

namespace imec {

inline constexpr double kSecurityTolerance = 1e-9;  // bits per token

struct TrialConfig {
  ChannelSpec channel;
  CodecConfig codec;
  std::size_t bit_length = 80;
  bool record_timings = true;
  // Test-only coupling rewrite, forwarded to the encoder.
  std::function<void(SparseCoupling&)> tamper;
};

/// Metrics of one encode/decode round trip. Holds no key or message material.
struct TrialReport {
  std::uint64_t seed = 0;
  std::string channel;
  unsigned block_bits = 0;
  double threshold = 0.0;
  std::size_t bit_length = 0;
  std::size_t tokens_in_coupling_phase = 0;
  std::size_t bit_errors = 0;
  std::vector<double> step_kl;               // KL(covertext || stegotext) per step, bits
  std::vector<double> step_channel_entropy;  // bits
  std::vector<double> step_encode_seconds;   // coupling work, channel time excluded
  std::vector<double> step_decode_seconds;
  double channel_seconds = 0.0;
  // "ok", "bit-errors", "insufficient-information", or the error code of a
  // failed run.
  std::string status = "ok";
  bool decoded_ok = false;

  bool completed() const noexcept {
    return status == "ok" || status == "bit-errors" || status == "insufficient-information";
  }
  double max_kl() const noexcept {
    double m = 0.0;
    for (double k : step_kl) m = std::max(m, k);
    return m;
  }
};

namespace detail {

/// Forwards to another channel and accumulates the time spent inside it.
class TimedChannel : public Channel {
public:
  TimedChannel(std::unique_ptr<Channel> inner, bool enabled) : inner_(std::move(inner)), enabled_(enabled) {}

  Categorical next_dist() override {
    auto t0 = now();
    auto d = inner_->next_dist();
    seconds_ += since(t0);
    return d;
  }
  void append(TokenId token) override {
    auto t0 = now();
    inner_->append(token);
    seconds_ += since(t0);
    context_.push_back(token);
  }
  std::string render(std::span<const TokenId> tokens) override { return inner_->render(tokens); }
  std::size_t vocab_size() const override { return inner_->vocab_size(); }

  double seconds() const noexcept { return seconds_; }

private:
  using Clock = std::chrono::steady_clock;
  Clock::time_point now() const { return enabled_ ? Clock::now() : Clock::time_point{}; }
  double since(Clock::time_point t0) const {
    return enabled_ ? std::chrono::duration<double>(Clock::now() - t0).count() : 0.0;
  }

  std::unique_ptr<Channel> inner_;
  bool enabled_;
  double seconds_ = 0.0;
};

/// Splits wall time between consecutive coupling steps into coupling work
/// and channel time.
class StepClock {
public:
  StepClock(const TimedChannel& ch, bool enabled) : ch_(ch), enabled_(enabled) { reset(); }

  void reset() {
    if (!enabled_) return;
    last_wall_ = std::chrono::steady_clock::now();
    last_channel_ = ch_.seconds();
  }

  double lap() {
    if (!enabled_) return 0.0;
    auto now = std::chrono::steady_clock::now();
    double wall = std::chrono::duration<double>(now - last_wall_).count();
    double channel = ch_.seconds() - last_channel_;
    last_wall_ = now;
    last_channel_ = ch_.seconds();
    return std::max(wall - channel, 0.0);
  }

private:
  const TimedChannel& ch_;
  bool enabled_;
  std::chrono::steady_clock::time_point last_wall_{};
  double last_channel_ = 0.0;
};

}  // namespace detail

/// Samples a message and key, encrypts, encodes while auditing every step,
/// decodes on a fresh channel, decrypts and counts bit errors. Library errors
/// become a failed report instead of propagating.
inline TrialReport run_trial(const TrialConfig& cfg, const ChannelFactory& factory, std::uint64_t seed) {
  TrialReport r;
  r.seed = seed;
  r.channel = to_string(cfg.channel);
  r.block_bits = cfg.codec.block_bits;
  r.threshold = cfg.codec.threshold;
  r.bit_length = cfg.bit_length;

  try {
    Rng rng(seed);
    BitString message(cfg.bit_length);
    for (auto& b : message) b = rng.bit() ? 1 : 0;
    const Key key = gen_key(cfg.bit_length, rng);
    const Ciphertext x = encrypt(message, key, cfg.codec.block_bits);

    detail::TimedChannel enc_channel(factory.create(), cfg.record_timings);
    detail::StepClock enc_clock(enc_channel, cfg.record_timings);
    CodecHooks enc_hooks;
    enc_hooks.tamper = cfg.tamper;
    enc_hooks.on_step = [&](const StepView& v) {
      r.step_encode_seconds.push_back(enc_clock.lap());
      const Categorical induced = stego_marginal(v.prior, v.coupling);
      r.step_kl.push_back(kl_or_infinity(v.channel_dist, induced));
      r.step_channel_entropy.push_back(entropy(v.channel_dist));
      enc_clock.reset();
    };
    const auto tokens = encode(x, enc_channel, cfg.codec, rng, enc_hooks);
    r.tokens_in_coupling_phase = r.step_kl.size();

    detail::TimedChannel dec_channel(factory.create(), cfg.record_timings);
    detail::StepClock dec_clock(dec_channel, cfg.record_timings);
    CodecHooks dec_hooks;
    dec_hooks.on_step = [&](const StepView&) {
      r.step_decode_seconds.push_back(dec_clock.lap());
      dec_clock.reset();
    };
    const DecodeResult decoded = decode(tokens, dec_channel, cfg.codec, cfg.bit_length, dec_hooks);
    r.channel_seconds = enc_channel.seconds() + dec_channel.seconds();

    const BitString recovered = decrypt(decoded.bits, key);
    for (std::size_t i = 0; i < recovered.size(); ++i) r.bit_errors += recovered[i] != message[i];
    if (!decoded.unambiguous) r.status = "insufficient-information";
    else if (r.bit_errors > 0) r.status = "bit-errors";
    else r.status = "ok";
    r.decoded_ok = r.status == "ok";
  } catch (const Error& e) {
    r.status = e.code();
    r.decoded_ok = false;
  }
  return r;
}

inline TrialReport run_trial(const TrialConfig& cfg, std::uint64_t seed) {
  return run_trial(cfg, ChannelFactory(cfg.channel), seed);
}

inline unsigned default_workers() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

/// Runs trials with seeds base_seed, base_seed + 1, ... on `workers`
/// threads. Reports come back in seed order regardless of scheduling.
inline std::vector<TrialReport> run_trials(const TrialConfig& cfg, std::size_t n_trials, std::uint64_t base_seed,
                                           unsigned workers = default_workers()) {
  const ChannelFactory factory(cfg.channel);
  std::vector<TrialReport> reports(n_trials);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n_trials; i = next++) reports[i] = run_trial(cfg, factory, base_seed + i);
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n_trials, 1))));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Aggregation

/// Sample mean with a 95% normal-approximation half-width.
struct Estimate {
  double mean = 0.0;
  double ci95 = 0.0;
  std::size_t n = 0;
};

inline Estimate estimate(const std::vector<double>& xs) {
  Estimate e;
  e.n = xs.size();
  if (xs.empty()) return e;
  double sum = 0.0;
  for (double x : xs) sum += x;
  e.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - e.mean) * (x - e.mean);
    const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    e.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(xs.size()));
  }
  return e;
}

struct SummaryReport {
  std::size_t trials = 0;
  std::size_t completed = 0;
  std::size_t failed = 0;
  std::map<std::string, std::size_t> statuses;
  Estimate bit_rate;                  // bits per coupling token
  std::optional<Estimate> efficiency; // bit rate / mean channel entropy; empty for zero-entropy channels
  double mean_channel_entropy = 0.0;  // bits per token
  double max_kl = 0.0;
  double mean_kl = 0.0;
  std::size_t kl_steps = 0;
  std::size_t bits = 0;
  std::size_t bit_errors = 0;
  Estimate error_rate;                // per bit, over completed trials
  Estimate encode_seconds_per_token;
  Estimate decode_seconds_per_token;
};

/// Pure function of the trial reports. Failed trials are counted but left
/// out of every rate.
inline SummaryReport summarize(const std::vector<TrialReport>& reports) {
  SummaryReport s;
  s.trials = reports.size();
  std::vector<double> rates, effs, errs, enc, dec;
  double entropy_sum = 0.0, kl_sum = 0.0;
  std::size_t entropy_steps = 0;
  for (const auto& r : reports) {
    ++s.statuses[r.status];
    for (double k : r.step_kl) {
      s.max_kl = std::max(s.max_kl, k);
      kl_sum += k;
      ++s.kl_steps;
    }
    if (!r.completed()) {
      ++s.failed;
      continue;
    }
    ++s.completed;
    s.bits += r.bit_length;
    s.bit_errors += r.bit_errors;
    errs.push_back(static_cast<double>(r.bit_errors) / static_cast<double>(r.bit_length));

    double h = 0.0;
    for (double x : r.step_channel_entropy) h += x;
    entropy_sum += h;
    entropy_steps += r.step_channel_entropy.size();

    if (r.tokens_in_coupling_phase > 0) {
      const double rate = static_cast<double>(r.bit_length) / static_cast<double>(r.tokens_in_coupling_phase);
      rates.push_back(rate);
      const double mean_h = h / static_cast<double>(r.step_channel_entropy.size());
      if (mean_h > 0.0) effs.push_back(rate / mean_h);
      double te = 0.0, td = 0.0;
      for (double x : r.step_encode_seconds) te += x;
      for (double x : r.step_decode_seconds) td += x;
      enc.push_back(te / static_cast<double>(r.tokens_in_coupling_phase));
      dec.push_back(td / static_cast<double>(r.tokens_in_coupling_phase));
    }
  }
  s.bit_rate = estimate(rates);
  if (!effs.empty()) s.efficiency = estimate(effs);
  s.mean_channel_entropy = entropy_steps ? entropy_sum / static_cast<double>(entropy_steps) : 0.0;
  s.mean_kl = s.kl_steps ? kl_sum / static_cast<double>(s.kl_steps) : 0.0;
  s.error_rate = estimate(errs);
  s.encode_seconds_per_token = estimate(enc);
  s.decode_seconds_per_token = estimate(dec);
  return s;
}

// ---------------------------------------------------------------------------
// Reports

struct KlReport {
  std::size_t trials = 0;
  std::size_t steps = 0;
  double max_kl = 0.0;
  double mean_kl = 0.0;
  // Plug-in KL(empirical || channel) over pooled tokens; only for channels
  // whose conditional does not depend on context.
  std::optional<double> sample_kl;
  bool flagged = false;  // max_kl above kSecurityTolerance
};

/// Plug-in estimate of KL(empirical token frequencies || cover), in bits.
inline double empirical_kl(const Categorical& cover, std::span<const TokenId> tokens) {
  if (tokens.empty()) return 0.0;
  std::map<TokenId, std::size_t> counts;
  for (TokenId t : tokens) ++counts[t];
  double total = 0.0;
  const double n = static_cast<double>(tokens.size());
  for (const auto& [token, c] : counts) {
    const double f = static_cast<double>(c) / n;
    const double q = cover.mass(token);
    if (q <= 0.0) return std::numeric_limits<double>::infinity();
    total += f * std::log2(f / q);
  }
  return total;
}

inline KlReport kl_report(const std::vector<TrialReport>& reports) {
  KlReport k;
  const auto s = summarize(reports);
  k.trials = s.trials;
  k.steps = s.kl_steps;
  k.max_kl = s.max_kl;
  k.mean_kl = s.mean_kl;
  k.flagged = !(k.max_kl <= kSecurityTolerance);
  return k;
}

/// Exact per-step audit over `n_trials`. For uniform channels the pooled
/// stegotokens are also checked with the sample-based estimator.
inline KlReport kl_report(const TrialConfig& cfg, std::size_t n_trials, std::uint64_t base_seed = 1,
                          unsigned workers = default_workers()) {
  KlReport k = kl_report(run_trials(cfg, n_trials, base_seed, workers));
  if (cfg.channel.kind == ChannelSpec::Kind::uniform) {
    const ChannelFactory factory(cfg.channel);
    const Categorical cover = factory.create()->next_dist();
    std::vector<TokenId> pooled;
    for (std::size_t i = 0; i < n_trials; ++i) {
      Rng rng(base_seed + i);
      BitString message(cfg.bit_length);
      for (auto& b : message) b = rng.bit() ? 1 : 0;
      const Key key = gen_key(cfg.bit_length, rng);
      auto ch = factory.create();
      try {
        auto tokens = encode(encrypt(message, key, cfg.codec.block_bits), *ch, cfg.codec, rng);
        pooled.insert(pooled.end(), tokens.begin(), tokens.end());
      } catch (const Error&) {
      }
    }
    k.sample_kl = empirical_kl(cover, pooled);
  }
  return k;
}

struct SweepPoint {
  double threshold = 0.0;
  SummaryReport summary;
};

/// Error rate per threshold. Thresholds must be given in descending order;
/// the error rate is expected to be non-increasing along the list.
inline std::vector<SweepPoint> threshold_sweep(TrialConfig cfg, const std::vector<double>& thresholds,
                                               std::size_t n_trials, std::uint64_t base_seed = 1,
                                               unsigned workers = default_workers()) {
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] < thresholds[i - 1]))
      throw Error("invalid-sweep", "thresholds must be strictly descending");
  std::vector<SweepPoint> curve;
  for (double t : thresholds) {
    cfg.codec.threshold = t;
    curve.push_back({t, summarize(run_trials(cfg, n_trials, base_seed, workers))});
  }
  return curve;
}

inline SummaryReport efficiency_report(const TrialConfig& cfg, std::size_t n_trials, std::uint64_t base_seed = 1,
                                       unsigned workers = default_workers()) {
  return summarize(run_trials(cfg, n_trials, base_seed, workers));
}

struct SpeedReport {
  std::size_t steps = 0;
  double median_encode_step_seconds = 0.0;
  double median_decode_step_seconds = 0.0;
  double mean_encode_step_seconds = 0.0;
  double mean_decode_step_seconds = 0.0;
  double channel_seconds_per_token = 0.0;
};

inline double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  const std::size_t mid = xs.size() / 2;
  std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid), xs.end());
  double m = xs[mid];
  if (xs.size() % 2 == 0) m = (m + *std::max_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid))) / 2.0;
  return m;
}

inline SpeedReport speed_report(const std::vector<TrialReport>& reports) {
  SpeedReport s;
  std::vector<double> enc, dec;
  double channel = 0.0;
  std::size_t tokens = 0;
  for (const auto& r : reports) {
    enc.insert(enc.end(), r.step_encode_seconds.begin(), r.step_encode_seconds.end());
    dec.insert(dec.end(), r.step_decode_seconds.begin(), r.step_decode_seconds.end());
    channel += r.channel_seconds;
    tokens += r.tokens_in_coupling_phase;
  }
  s.steps = enc.size();
  s.median_encode_step_seconds = median(enc);
  s.median_decode_step_seconds = median(dec);
  s.mean_encode_step_seconds = estimate(enc).mean;
  s.mean_decode_step_seconds = estimate(dec).mean;
  // Both directions query the channel once per token.
  s.channel_seconds_per_token = tokens ? channel / (2.0 * static_cast<double>(tokens)) : 0.0;
  return s;
}

/// Single-threaded so that per-step timings do not contend for cores.
inline SpeedReport speed_report(TrialConfig cfg, std::size_t n_trials, std::uint64_t base_seed = 1) {
  cfg.record_timings = true;
  return speed_report(run_trials(cfg, n_trials, base_seed, 1));
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const TrialReport& r, bool include_timings = true) {
  nlohmann::json j = {{"seed", r.seed},
                      {"channel", r.channel},
                      {"block_bits", r.block_bits},
                      {"threshold", r.threshold},
                      {"bit_length", r.bit_length},
                      {"tokens_in_coupling_phase", r.tokens_in_coupling_phase},
                      {"bit_errors", r.bit_errors},
                      {"status", r.status},
                      {"decoded_ok", r.decoded_ok},
                      {"step_kl", r.step_kl},
                      {"step_channel_entropy", r.step_channel_entropy}};
  if (include_timings) {
    j["step_encode_seconds"] = r.step_encode_seconds;
    j["step_decode_seconds"] = r.step_decode_seconds;
    j["channel_seconds"] = r.channel_seconds;
  }
  return j;
}

inline TrialReport trial_report_from_json(const nlohmann::json& j) {
  TrialReport r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.channel = j.at("channel").get<std::string>();
  r.block_bits = j.at("block_bits").get<unsigned>();
  r.threshold = j.at("threshold").get<double>();
  r.bit_length = j.at("bit_length").get<std::size_t>();
  r.tokens_in_coupling_phase = j.at("tokens_in_coupling_phase").get<std::size_t>();
  r.bit_errors = j.at("bit_errors").get<std::size_t>();
  r.status = j.at("status").get<std::string>();
  r.decoded_ok = j.at("decoded_ok").get<bool>();
  // JSON has no infinity; nlohmann writes it as null.
  for (const auto& k : j.at("step_kl"))
    r.step_kl.push_back(k.is_null() ? std::numeric_limits<double>::infinity() : k.get<double>());
  r.step_channel_entropy = j.at("step_channel_entropy").get<std::vector<double>>();
  r.step_encode_seconds = j.value("step_encode_seconds", std::vector<double>{});
  r.step_decode_seconds = j.value("step_decode_seconds", std::vector<double>{});
  r.channel_seconds = j.value("channel_seconds", 0.0);
  return r;
}

inline nlohmann::json to_json(const Estimate& e) { return {{"mean", e.mean}, {"ci95", e.ci95}, {"n", e.n}}; }

inline nlohmann::json to_json(const SummaryReport& s) {
  return {{"trials", s.trials},
          {"completed", s.completed},
          {"failed", s.failed},
          {"statuses", s.statuses},
          {"bit_rate", to_json(s.bit_rate)},
          {"efficiency", s.efficiency ? to_json(*s.efficiency) : nlohmann::json(nullptr)},
          {"mean_channel_entropy", s.mean_channel_entropy},
          {"max_kl", s.max_kl},
          {"mean_kl", s.mean_kl},
          {"kl_steps", s.kl_steps},
          {"bits", s.bits},
          {"bit_errors", s.bit_errors},
          {"error_rate", to_json(s.error_rate)},
          {"encode_seconds_per_token", to_json(s.encode_seconds_per_token)},
          {"decode_seconds_per_token", to_json(s.decode_seconds_per_token)}};
}

inline nlohmann::json to_json(const KlReport& k) {
  return {{"trials", k.trials},
          {"steps", k.steps},
          {"max_kl", k.max_kl},
          {"mean_kl", k.mean_kl},
          {"sample_kl", k.sample_kl ? nlohmann::json(*k.sample_kl) : nlohmann::json(nullptr)},
          {"flagged", k.flagged}};
}

inline nlohmann::json to_json(const SpeedReport& s) {
  return {{"steps", s.steps},
          {"median_encode_step_seconds", s.median_encode_step_seconds},
          {"median_decode_step_seconds", s.median_decode_step_seconds},
          {"mean_encode_step_seconds", s.mean_encode_step_seconds},
          {"mean_decode_step_seconds", s.mean_decode_step_seconds},
          {"channel_seconds_per_token", s.channel_seconds_per_token}};
}

inline void write_jsonl(std::ostream& out, const std::vector<TrialReport>& reports, bool include_timings = true) {
  for (const auto& r : reports) out << to_json(r, include_timings).dump() << '\n';
}

inline std::vector<TrialReport> read_jsonl(std::istream& in) {
  std::vector<TrialReport> reports;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) reports.push_back(trial_report_from_json(nlohmann::json::parse(line)));
  return reports;
}

/// threshold,error_rate,ci
inline std::string sweep_csv(const std::vector<SweepPoint>& curve) {
  // Shortest decimal that reads back to the same double.
  auto num = [](double x) { return nlohmann::json(x).dump(); };
  std::ostringstream out;
  out << "threshold,error_rate,ci\n";
  for (const auto& p : curve)
    out << num(p.threshold) << ',' << num(p.summary.error_rate.mean) << ',' << num(p.summary.error_rate.ci95) << '\n';
  return out.str();
}

}  // namespace imec
