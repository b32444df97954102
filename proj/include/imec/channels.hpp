#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "imec/error.hpp"
#include "imec/prob.hpp"
#include "imec/transport.hpp"

namespace imec {

// ---------------------------------------------------------------------------
// Truncation

struct Truncation {
  enum class Kind { none, top_k, top_p };
  Kind kind = Kind::none;
  std::size_t k = 0;
  double p = 1.0;

  static Truncation none() { return {}; }
  static Truncation top_k(std::size_t k) { return {Kind::top_k, k, 1.0}; }
  static Truncation top_p(double p) { return {Kind::top_p, 0, p}; }

  friend bool operator==(const Truncation&, const Truncation&) = default;
};

/// Restricts `d` to its k most likely tokens (top_k) or to the smallest
/// most-likely prefix holding at least mass p (top_p), then renormalizes.
/// Probability ties are resolved toward the lower token id.
inline Categorical truncate(const Categorical& d, const Truncation& rule) {
  if (rule.kind == Truncation::Kind::none) return d;
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return d.prob(a) > d.prob(b); });

  std::size_t keep = d.size();
  if (rule.kind == Truncation::Kind::top_k) {
    keep = std::min(std::max<std::size_t>(rule.k, 1), d.size());
  } else {
    double cumulative = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      cumulative += d.prob(order[i]);
      if (cumulative >= rule.p - 1e-12) {
        keep = i + 1;
        break;
      }
    }
  }
  if (keep == d.size()) return d;

  std::vector<TokenId> ids;
  std::vector<double> probs;
  for (std::size_t i = 0; i < keep; ++i) {
    ids.push_back(d.id(order[i]));
    probs.push_back(d.prob(order[i]));
  }
  return Categorical(std::move(ids), std::move(probs));
}

// ---------------------------------------------------------------------------
// Channel interface

/// Autoregressive covertext distribution. next_dist() is a pure function of
/// the emitted context.
class Channel {
public:
  virtual ~Channel() = default;

  virtual Categorical next_dist() = 0;

  /// Extends the context by one token. Throws unknown-token for ids outside
  /// the vocabulary.
  virtual void append(TokenId token) {
    check_vocab(token);
    context_.push_back(token);
  }

  virtual std::string render(std::span<const TokenId> tokens) = 0;

  /// Zero when the vocabulary size is not known locally (remote channels).
  virtual std::size_t vocab_size() const = 0;

  const std::vector<TokenId>& context() const noexcept { return context_; }

protected:
  void check_vocab(TokenId token) const {
    std::size_t v = vocab_size();
    if (v != 0 && token >= v)
      throw Error("unknown-token", "token " + std::to_string(token) + " outside vocabulary of " +
                                       std::to_string(v));
  }

  std::vector<TokenId> context_;
};

inline std::string render_ids(std::span<const TokenId> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += std::to_string(tokens[i]);
  }
  return out;
}

class UniformChannel : public Channel {
public:
  explicit UniformChannel(std::size_t k) : dist_(Categorical::uniform(k)) {}

  Categorical next_dist() override { return dist_; }
  std::string render(std::span<const TokenId> tokens) override { return render_ids(tokens); }
  std::size_t vocab_size() const override { return dist_.size(); }

private:
  Categorical dist_;
};

/// Replays a fixed list of per-step distributions; the last one repeats once
/// the list is exhausted. Fixture format:
///   {"vocab_size": V (optional), "steps": [{"ids": [...], "probs": [...]}, ...]}
class ScriptedChannel : public Channel {
public:
  explicit ScriptedChannel(std::vector<Categorical> steps, std::size_t vocab = 0)
      : steps_(std::move(steps)), vocab_(vocab) {
    if (steps_.empty()) throw Error("invalid-channel", "scripted channel needs at least one step");
    if (vocab_ == 0)
      for (const auto& s : steps_) vocab_ = std::max<std::size_t>(vocab_, s.ids().back() + 1u);
  }

  static ScriptedChannel from_json(const nlohmann::json& j) {
    std::vector<Categorical> steps;
    try {
      for (const auto& s : j.at("steps")) steps.push_back(categorical_from_json(s));
      return ScriptedChannel(std::move(steps), j.value("vocab_size", std::size_t{0}));
    } catch (const nlohmann::json::exception& e) {
      throw Error("invalid-channel", std::string("malformed scripted fixture: ") + e.what());
    }
  }

  static ScriptedChannel from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("invalid-channel", "cannot open fixture " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("invalid-channel", std::string("fixture is not JSON: ") + e.what());
    }
  }

  Categorical next_dist() override {
    return steps_[std::min(context_.size(), steps_.size() - 1)];
  }
  std::string render(std::span<const TokenId> tokens) override { return render_ids(tokens); }
  std::size_t vocab_size() const override { return vocab_; }

private:
  std::vector<Categorical> steps_;
  std::size_t vocab_;
};

/// Byte-level order-n Markov model with add-alpha smoothing over the corpus
/// alphabet. Token ids index the sorted alphabet. Contexts that are shorter
/// than the order or never seen in the corpus fall back to uniform.
class MarkovChannel : public Channel {
public:
  MarkovChannel(std::size_t order, std::string_view corpus, double alpha = 0.1)
      : order_(order), alpha_(alpha) {
    if (corpus.empty()) throw Error("invalid-channel", "markov corpus is empty");
    if (!(alpha >= 0.0)) throw Error("invalid-channel", "smoothing must be non-negative");
    std::array<bool, 256> seen{};
    for (unsigned char c : corpus) seen[c] = true;
    std::array<int, 256> index{};
    index.fill(-1);
    for (int c = 0; c < 256; ++c)
      if (seen[c]) {
        index[c] = static_cast<int>(alphabet_.size());
        alphabet_.push_back(static_cast<char>(c));
      }
    const std::size_t v = alphabet_.size();
    auto counts = std::make_shared<CountTable>();
    for (std::size_t i = order_; i < corpus.size(); ++i) {
      std::string key;
      for (std::size_t k = i - order_; k < i; ++k)
        key.push_back(static_cast<char>(index[static_cast<unsigned char>(corpus[k])]));
      auto& row = (*counts)[key];
      if (row.empty()) row.assign(v, 0);
      ++row[static_cast<std::size_t>(index[static_cast<unsigned char>(corpus[i])])];
    }
    counts_ = std::move(counts);
  }

  static MarkovChannel from_file(std::size_t order, const std::string& path, double alpha = 0.1) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("invalid-channel", "cannot open corpus " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return MarkovChannel(order, ss.str(), alpha);
  }

  Categorical next_dist() override {
    const std::size_t v = alphabet_.size();
    if (context_.size() < order_) return Categorical::uniform(v);
    std::string key;
    for (std::size_t k = context_.size() - order_; k < context_.size(); ++k)
      key.push_back(static_cast<char>(context_[k]));
    auto it = counts_->find(key);
    if (it == counts_->end()) return Categorical::uniform(v);

    std::uint64_t total = 0;
    for (auto c : it->second) total += c;
    std::vector<TokenId> ids(v);
    std::iota(ids.begin(), ids.end(), TokenId{0});
    std::vector<double> probs(v);
    const double denom = static_cast<double>(total) + alpha_ * static_cast<double>(v);
    for (std::size_t s = 0; s < v; ++s) probs[s] = (static_cast<double>(it->second[s]) + alpha_) / denom;
    return Categorical(std::move(ids), std::move(probs));
  }

  std::string render(std::span<const TokenId> tokens) override {
    std::string out;
    for (TokenId t : tokens) {
      check_vocab(t);
      out.push_back(alphabet_[t]);
    }
    return out;
  }

  std::size_t vocab_size() const override { return alphabet_.size(); }
  const std::string& alphabet() const noexcept { return alphabet_; }
  std::size_t order() const noexcept { return order_; }

private:
  std::size_t order_;
  double alpha_;
  std::string alphabet_;
  // Context (alphabet indices packed one per char) to next-symbol counts.
  // Shared and immutable, so copies of a trained channel are cheap.
  using CountTable = std::unordered_map<std::string, std::vector<std::uint32_t>>;
  std::shared_ptr<const CountTable> counts_;
};

/// Applies a truncation rule on top of another channel.
class TruncatedChannel : public Channel {
public:
  TruncatedChannel(std::unique_ptr<Channel> inner, Truncation rule)
      : inner_(std::move(inner)), rule_(rule) {}

  Categorical next_dist() override { return truncate(inner_->next_dist(), rule_); }
  void append(TokenId token) override {
    inner_->append(token);
    context_.push_back(token);
  }
  std::string render(std::span<const TokenId> tokens) override { return inner_->render(tokens); }
  std::size_t vocab_size() const override { return inner_->vocab_size(); }

private:
  std::unique_ptr<Channel> inner_;
  Truncation rule_;
};

/// Client side of the newline-delimited JSON channel protocol:
///   {"id":N,"op":"reset","context_text":S}  -> {"id":N,"ok":true}
///   {"id":N,"op":"next_dist"}              -> {"id":N,"ids":[...],"probs":[...]}
///   {"id":N,"op":"append","token":T}       -> {"id":N,"ok":true}
///   {"id":N,"op":"render","tokens":[...]}  -> {"id":N,"text":S}
/// Any request may be answered with {"id":N,"error":S}. Requests are strictly
/// sequential. Distributions are cached per context so repeated queries for
/// the same prefix agree.
class RemoteChannel : public Channel {
public:
  explicit RemoteChannel(std::unique_ptr<LineTransport> transport, std::string context_text = "")
      : transport_(std::move(transport)) {
    auto reply = call({{"op", "reset"}, {"context_text", std::move(context_text)}});
    expect_ok(reply);
  }

  Categorical next_dist() override {
    auto it = cache_.find(context_);
    if (it != cache_.end()) return it->second;
    auto reply = call({{"op", "next_dist"}});
    Categorical d;
    try {
      d = Categorical(reply.at("ids").get<std::vector<TokenId>>(),
                      reply.at("probs").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
      throw Error("protocol-violation", std::string("bad next_dist reply: ") + e.what());
    } catch (const Error& e) {
      throw Error("protocol-violation", std::string("bad next_dist reply: ") + e.what());
    }
    cache_.emplace(context_, d);
    return d;
  }

  void append(TokenId token) override {
    expect_ok(call({{"op", "append"}, {"token", token}}));
    context_.push_back(token);
  }

  std::string render(std::span<const TokenId> tokens) override {
    auto reply = call({{"op", "render"}, {"tokens", std::vector<TokenId>(tokens.begin(), tokens.end())}});
    auto it = reply.find("text");
    if (it == reply.end() || !it->is_string())
      throw Error("protocol-violation", "render reply lacks text");
    return it->get<std::string>();
  }

  std::size_t vocab_size() const override { return 0; }

private:
  nlohmann::json call(nlohmann::json request) {
    const std::uint64_t id = next_id_++;
    request["id"] = id;
    transport_->send_line(request.dump());
    std::string line = transport_->recv_line();
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw Error("protocol-violation", "reply is not JSON");
    }
    if (!reply.is_object()) throw Error("protocol-violation", "reply is not an object");
    auto rid = reply.find("id");
    if (rid == reply.end() || !rid->is_number_unsigned() || rid->get<std::uint64_t>() != id)
      throw Error("protocol-violation", "reply id does not match request " + std::to_string(id));
    auto err = reply.find("error");
    if (err != reply.end())
      throw Error("remote-error", err->is_string() ? err->get<std::string>() : err->dump());
    return reply;
  }

  static void expect_ok(const nlohmann::json& reply) {
    auto ok = reply.find("ok");
    if (ok == reply.end() || !ok->is_boolean() || !ok->get<bool>())
      throw Error("protocol-violation", "expected {\"ok\":true}");
  }

  std::unique_ptr<LineTransport> transport_;
  std::uint64_t next_id_ = 1;
  std::map<std::vector<TokenId>, Categorical> cache_;
};

// ---------------------------------------------------------------------------
// Channel specifications

struct ChannelSpec {
  enum class Kind { uniform, markov, scripted, remote, exec };
  Kind kind = Kind::uniform;
  std::size_t k = 40;            // uniform
  std::size_t order = 2;         // markov
  double alpha = 0.1;            // markov
  std::string path;              // markov corpus / scripted fixture
  std::string host;              // remote
  std::uint16_t port = 0;        // remote
  std::string command;           // exec
  std::string context_text;      // remote / exec
  Truncation truncation;

  friend bool operator==(const ChannelSpec&, const ChannelSpec&) = default;
};

namespace detail {

inline std::size_t parse_size(const std::string& s, const char* what) {
  try {
    std::size_t pos = 0;
    unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw Error("invalid-channel-spec", std::string("bad ") + what + ": '" + s + "'");
  }
}

inline double parse_real(const std::string& s, const char* what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error("invalid-channel-spec", std::string("bad ") + what + ": '" + s + "'");
  }
}

}  // namespace detail

/// Parses the command-line channel grammar:
///   uniform:K | markov:ORDER:PATH | scripted:PATH | remote:HOST:PORT | exec:COMMAND
/// followed by optional suffixes +topk=K, +topp=P, +alpha=A (markov).
inline ChannelSpec parse_channel_spec(std::string text) {
  ChannelSpec spec;
  // Peel recognised suffixes from the right so paths may still contain '+'.
  while (true) {
    auto plus = text.rfind('+');
    if (plus == std::string::npos) break;
    std::string opt = text.substr(plus + 1);
    auto eq = opt.find('=');
    if (eq == std::string::npos) break;
    std::string name = opt.substr(0, eq), value = opt.substr(eq + 1);
    if (name == "topk") {
      spec.truncation = Truncation::top_k(detail::parse_size(value, "topk"));
      if (spec.truncation.k == 0) throw Error("invalid-channel-spec", "topk must be positive");
    } else if (name == "topp") {
      double p = detail::parse_real(value, "topp");
      if (!(p > 0.0 && p <= 1.0)) throw Error("invalid-channel-spec", "topp must be in (0, 1]");
      spec.truncation = Truncation::top_p(p);
    } else if (name == "alpha") {
      spec.alpha = detail::parse_real(value, "alpha");
      if (!(spec.alpha >= 0.0)) throw Error("invalid-channel-spec", "alpha must be non-negative");
    } else {
      break;
    }
    text.resize(plus);
  }

  auto colon = text.find(':');
  if (colon == std::string::npos)
    throw Error("invalid-channel-spec", "expected KIND:ARGS, got '" + text + "'");
  std::string kind = text.substr(0, colon), rest = text.substr(colon + 1);
  if (kind == "uniform") {
    spec.kind = ChannelSpec::Kind::uniform;
    spec.k = detail::parse_size(rest, "uniform size");
    if (spec.k == 0) throw Error("invalid-channel-spec", "uniform size must be positive");
  } else if (kind == "markov") {
    spec.kind = ChannelSpec::Kind::markov;
    auto c2 = rest.find(':');
    if (c2 == std::string::npos) throw Error("invalid-channel-spec", "expected markov:ORDER:PATH");
    spec.order = detail::parse_size(rest.substr(0, c2), "markov order");
    spec.path = rest.substr(c2 + 1);
  } else if (kind == "scripted") {
    spec.kind = ChannelSpec::Kind::scripted;
    spec.path = rest;
  } else if (kind == "remote") {
    spec.kind = ChannelSpec::Kind::remote;
    auto c2 = rest.rfind(':');
    if (c2 == std::string::npos) throw Error("invalid-channel-spec", "expected remote:HOST:PORT");
    spec.host = rest.substr(0, c2);
    std::size_t port = detail::parse_size(rest.substr(c2 + 1), "port");
    if (port == 0 || port > 65535) throw Error("invalid-channel-spec", "port out of range");
    spec.port = static_cast<std::uint16_t>(port);
  } else if (kind == "exec") {
    spec.kind = ChannelSpec::Kind::exec;
    spec.command = rest;
  } else {
    throw Error("invalid-channel-spec", "unknown channel kind '" + kind + "'");
  }
  if ((spec.kind == ChannelSpec::Kind::markov || spec.kind == ChannelSpec::Kind::scripted) &&
      spec.path.empty())
    throw Error("invalid-channel-spec", "missing path");
  return spec;
}

inline std::string to_string(const ChannelSpec& spec) {
  std::ostringstream out;
  switch (spec.kind) {
    case ChannelSpec::Kind::uniform: out << "uniform:" << spec.k; break;
    case ChannelSpec::Kind::markov: out << "markov:" << spec.order << ':' << spec.path; break;
    case ChannelSpec::Kind::scripted: out << "scripted:" << spec.path; break;
    case ChannelSpec::Kind::remote: out << "remote:" << spec.host << ':' << spec.port; break;
    case ChannelSpec::Kind::exec: out << "exec:" << spec.command; break;
  }
  if (spec.kind == ChannelSpec::Kind::markov && spec.alpha != 0.1) out << "+alpha=" << spec.alpha;
  if (spec.truncation.kind == Truncation::Kind::top_k) out << "+topk=" << spec.truncation.k;
  if (spec.truncation.kind == Truncation::Kind::top_p) out << "+topp=" << spec.truncation.p;
  return out.str();
}

inline nlohmann::json to_json(const ChannelSpec& spec) {
  nlohmann::json j;
  switch (spec.kind) {
    case ChannelSpec::Kind::uniform:
      j = {{"kind", "uniform"}, {"k", spec.k}};
      break;
    case ChannelSpec::Kind::markov:
      j = {{"kind", "markov"}, {"order", spec.order}, {"path", spec.path}, {"alpha", spec.alpha}};
      break;
    case ChannelSpec::Kind::scripted:
      j = {{"kind", "scripted"}, {"path", spec.path}};
      break;
    case ChannelSpec::Kind::remote:
      j = {{"kind", "remote"}, {"host", spec.host}, {"port", spec.port}, {"context_text", spec.context_text}};
      break;
    case ChannelSpec::Kind::exec:
      j = {{"kind", "exec"}, {"command", spec.command}, {"context_text", spec.context_text}};
      break;
  }
  switch (spec.truncation.kind) {
    case Truncation::Kind::none: j["truncation"] = {{"kind", "none"}}; break;
    case Truncation::Kind::top_k: j["truncation"] = {{"kind", "top_k"}, {"k", spec.truncation.k}}; break;
    case Truncation::Kind::top_p: j["truncation"] = {{"kind", "top_p"}, {"p", spec.truncation.p}}; break;
  }
  return j;
}

inline ChannelSpec channel_spec_from_json(const nlohmann::json& j) {
  try {
    ChannelSpec spec;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "uniform") {
      spec.kind = ChannelSpec::Kind::uniform;
      spec.k = j.at("k").get<std::size_t>();
    } else if (kind == "markov") {
      spec.kind = ChannelSpec::Kind::markov;
      spec.order = j.at("order").get<std::size_t>();
      spec.path = j.at("path").get<std::string>();
      spec.alpha = j.value("alpha", 0.1);
    } else if (kind == "scripted") {
      spec.kind = ChannelSpec::Kind::scripted;
      spec.path = j.at("path").get<std::string>();
    } else if (kind == "remote") {
      spec.kind = ChannelSpec::Kind::remote;
      spec.host = j.at("host").get<std::string>();
      spec.port = j.at("port").get<std::uint16_t>();
      spec.context_text = j.value("context_text", std::string{});
    } else if (kind == "exec") {
      spec.kind = ChannelSpec::Kind::exec;
      spec.command = j.at("command").get<std::string>();
      spec.context_text = j.value("context_text", std::string{});
    } else {
      throw Error("invalid-channel-spec", "unknown channel kind '" + kind + "'");
    }
    if (j.contains("truncation")) {
      const auto& t = j.at("truncation");
      const auto tk = t.at("kind").get<std::string>();
      if (tk == "top_k") spec.truncation = Truncation::top_k(t.at("k").get<std::size_t>());
      else if (tk == "top_p") spec.truncation = Truncation::top_p(t.at("p").get<double>());
      else if (tk != "none") throw Error("invalid-channel-spec", "unknown truncation '" + tk + "'");
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid-channel-spec", std::string("malformed channel spec: ") + e.what());
  }
}

/// Builds a fresh channel instance with an empty context.
inline std::unique_ptr<Channel> make_channel(const ChannelSpec& spec);

/// Produces fresh channels for one spec, loading corpora and fixtures once.
/// Remote kinds open a new connection per channel.
class ChannelFactory {
public:
  explicit ChannelFactory(ChannelSpec spec) : spec_(std::move(spec)) {
    if (spec_.kind == ChannelSpec::Kind::markov)
      markov_ = std::make_shared<MarkovChannel>(MarkovChannel::from_file(spec_.order, spec_.path, spec_.alpha));
    else if (spec_.kind == ChannelSpec::Kind::scripted)
      scripted_ = std::make_shared<ScriptedChannel>(ScriptedChannel::from_file(spec_.path));
  }

  const ChannelSpec& spec() const noexcept { return spec_; }

  std::unique_ptr<Channel> create() const {
    std::unique_ptr<Channel> ch;
    if (markov_) ch = std::make_unique<MarkovChannel>(*markov_);
    else if (scripted_) ch = std::make_unique<ScriptedChannel>(*scripted_);
    else {
      ChannelSpec raw = spec_;
      raw.truncation = Truncation::none();
      ch = make_channel(raw);
    }
    if (spec_.truncation.kind != Truncation::Kind::none)
      ch = std::make_unique<TruncatedChannel>(std::move(ch), spec_.truncation);
    return ch;
  }

private:
  ChannelSpec spec_;
  std::shared_ptr<const MarkovChannel> markov_;
  std::shared_ptr<const ScriptedChannel> scripted_;
};

inline std::unique_ptr<Channel> make_channel(const ChannelSpec& spec) {
  std::unique_ptr<Channel> ch;
  switch (spec.kind) {
    case ChannelSpec::Kind::uniform:
      ch = std::make_unique<UniformChannel>(spec.k);
      break;
    case ChannelSpec::Kind::markov:
      ch = std::make_unique<MarkovChannel>(MarkovChannel::from_file(spec.order, spec.path, spec.alpha));
      break;
    case ChannelSpec::Kind::scripted:
      ch = std::make_unique<ScriptedChannel>(ScriptedChannel::from_file(spec.path));
      break;
    case ChannelSpec::Kind::remote:
      ch = std::make_unique<RemoteChannel>(connect_tcp(spec.host, spec.port), spec.context_text);
      break;
    case ChannelSpec::Kind::exec:
      ch = std::make_unique<RemoteChannel>(ProcessTransport::spawn(spec.command), spec.context_text);
      break;
  }
  if (spec.truncation.kind != Truncation::Kind::none)
    ch = std::make_unique<TruncatedChannel>(std::move(ch), spec.truncation);
  return ch;
}

}  // namespace imec
