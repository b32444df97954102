// imec command-line tool: keygen, encode, decode, audit, bench.
//
// Exit codes: 0 success, 1 usage error, 2 protocol or codec error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "imec/imec.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitCodec = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("STEGO_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError("STEGO_SEED is not an unsigned integer");
    }
  }
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

std::string read_input(const std::string& path) {
  if (path == "-") return {std::istreambuf_iterator<char>(std::cin), {}};
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_output(const std::string& path, const std::string& data) {
  if (path.empty() || path == "-") {
    std::cout << data;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path);
  out << data;
}

imec::Key load_key(const std::string& path, std::size_t bits) {
  return imec::key_from_hex(read_input(path), bits);
}

imec::ChannelSpec parse_channel(const std::string& text) {
  try {
    return imec::parse_channel_spec(text);
  } catch (const imec::Error& e) {
    throw UsageError(e.what());
  }
}

void check_block_bits(unsigned b) {
  if (b < 1 || b > imec::kMaxBlockBits) throw UsageError("--block-bits must be in [1, 20]");
}

std::vector<double> parse_thresholds(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw UsageError("bad threshold '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("--sweep needs at least one threshold");
  for (std::size_t i = 1; i < out.size(); ++i)
    if (!(out[i] < out[i - 1])) throw UsageError("--sweep thresholds must be strictly descending");
  return out;
}

struct CodecFlags {
  unsigned block_bits = 10;
  double threshold = 0.1;
  std::size_t min_tokens = 0;
  std::size_t max_tokens = 10000;

  void add(CLI::App* app, bool lengths) {
    app->add_option("--block-bits", block_bits, "ciphertext block size in bits (1-20)")->capture_default_str();
    app->add_option("--threshold", threshold, "stop coupling once every block entropy is below this")
        ->capture_default_str();
    if (lengths) {
      app->add_option("--min-tokens", min_tokens, "pad with plain covertext up to this many tokens");
      app->add_option("--max-tokens", max_tokens, "abort when coupling needs more tokens")->capture_default_str();
    }
  }

  imec::CodecConfig config() const {
    check_block_bits(block_bits);
    if (!(threshold > 0.0)) throw UsageError("--threshold must be positive");
    if (max_tokens < min_tokens) throw UsageError("--max-tokens must be at least --min-tokens");
    return {block_bits, threshold, min_tokens, max_tokens};
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perfectly secure steganography by iterative minimum entropy coupling"};
  app.require_subcommand(1);

  // keygen
  auto* keygen = app.add_subcommand("keygen", "generate a one-time-pad key (lowercase hex)");
  std::size_t key_bits = 80;
  std::optional<std::uint64_t> seed;
  std::string out_path;
  keygen->add_option("--bits", key_bits, "key length in bits")->capture_default_str();
  keygen->add_option("--seed", seed, "RNG seed (falls back to STEGO_SEED)");
  keygen->add_option("--out,-o", out_path, "key file (default stdout)");

  // encode
  auto* enc = app.add_subcommand("encode", "hide a message in covertext");
  std::string key_path, message_path = "-", channel_text = "uniform:40", render_path;
  std::size_t length_override = 0;
  CodecFlags enc_flags;
  enc->add_option("--key", key_path, "key file")->required();
  enc->add_option("--message", message_path, "message file, '-' for stdin")->capture_default_str();
  enc->add_option("--channel", channel_text, "channel spec, e.g. uniform:40, markov:2:corpus.txt+topk=20")
      ->capture_default_str();
  enc->add_option("--bits", length_override, "message length in bits (default: from key file)");
  enc->add_option("--seed", seed, "RNG seed (falls back to STEGO_SEED)");
  enc->add_option("--out,-o", out_path, "stegotext JSON file (default stdout)");
  enc->add_option("--render", render_path, "also write the human-readable stegotext here");
  enc_flags.add(enc, true);

  // decode
  auto* dec = app.add_subcommand("decode", "recover a message from stegotext");
  std::string stego_path = "-";
  dec->add_option("--key", key_path, "key file")->required();
  dec->add_option("--stego", stego_path, "stegotext JSON file, '-' for stdin")->capture_default_str();
  dec->add_option("--bits", length_override, "message length in bits (default: from key file)");
  dec->add_option("--out,-o", out_path, "recovered message file (default stdout)");

  // audit and bench share the trial flags
  struct TrialFlags {
    std::string channel = "uniform:40";
    std::size_t trials = 100;
    std::size_t bits = 80;
    unsigned workers = imec::default_workers();
    std::string jsonl;
    CodecFlags codec;
  };
  TrialFlags audit_flags, bench_flags;
  auto add_trial_flags = [&](CLI::App* sub, TrialFlags& f) {
    sub->add_option("--channel", f.channel, "channel spec")->capture_default_str();
    sub->add_option("--trials", f.trials, "number of trials")->capture_default_str();
    sub->add_option("--bits", f.bits, "ciphertext length per trial")->capture_default_str();
    sub->add_option("--seed", seed, "base seed; trial i uses seed + i (falls back to STEGO_SEED)");
    sub->add_option("--workers", f.workers, "parallel trial workers")->capture_default_str();
    sub->add_option("--jsonl", f.jsonl, "write one trial report per line here");
    sub->add_option("--out,-o", out_path, "summary JSON file (default stdout)");
    f.codec.add(sub, true);
  };
  auto* audit = app.add_subcommand("audit", "per-step KL audit of encoder output against the channel");
  add_trial_flags(audit, audit_flags);

  auto* bench = app.add_subcommand("bench", "efficiency, error rate, KL and speed over many trials");
  add_trial_flags(bench, bench_flags);
  std::string sweep_list, csv_path;
  bench->add_option("--sweep", sweep_list, "descending comma-separated thresholds for an error-rate sweep");
  bench->add_option("--csv", csv_path, "write the sweep as threshold,error_rate,ci");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*keygen) {
      if (key_bits == 0) throw UsageError("--bits must be positive");
      imec::Rng rng(resolve_seed(seed));
      write_output(out_path, imec::key_to_hex(imec::gen_key(key_bits, rng)) + "\n");
      return 0;
    }

    if (*enc) {
      const auto cfg = enc_flags.config();
      const auto spec = parse_channel(channel_text);
      const auto key = load_key(key_path, length_override);
      const auto message = imec::bytes_to_bits(read_input(message_path));
      const auto x = imec::encrypt(message, key, cfg.block_bits);
      imec::Rng rng(resolve_seed(seed));
      auto channel = imec::make_channel(spec);
      imec::StegoFile file;
      file.channel = spec;
      file.block_bits = cfg.block_bits;
      file.threshold = cfg.threshold;
      file.n_blocks = x.n_blocks();
      file.tokens = imec::encode(x, *channel, cfg, rng);
      write_output(out_path, imec::to_json(file).dump() + "\n");
      if (!render_path.empty()) {
        auto fresh = imec::make_channel(spec);
        write_output(render_path, fresh->render(file.tokens) + "\n");
      }
      return 0;
    }

    if (*dec) {
      const auto file = imec::stego_file_from_json(nlohmann::json::parse(read_input(stego_path)));
      const auto key = load_key(key_path, length_override);
      if (imec::block_count(key.size(), file.block_bits) != file.n_blocks)
        throw imec::Error("length-mismatch", "key length does not match the stegotext block count");
      imec::CodecConfig cfg{file.block_bits, file.threshold, 0, file.tokens.size()};
      auto channel = imec::make_channel(file.channel);
      const auto result = imec::decode(file.tokens, *channel, cfg, key.size());
      write_output(out_path, imec::bits_to_bytes(imec::decrypt(result.bits, key)));
      return 0;
    }

    if (*audit || *bench) {
      const TrialFlags& f = *audit ? audit_flags : bench_flags;
      if (f.trials == 0) throw UsageError("--trials must be positive");
      if (f.bits == 0) throw UsageError("--bits must be positive");
      imec::TrialConfig cfg;
      cfg.channel = parse_channel(f.channel);
      cfg.codec = f.codec.config();
      cfg.bit_length = f.bits;
      const std::uint64_t base = resolve_seed(seed);

      nlohmann::json out = {{"channel", imec::to_string(cfg.channel)},
                            {"block_bits", cfg.codec.block_bits},
                            {"threshold", cfg.codec.threshold},
                            {"bit_length", cfg.bit_length},
                            {"seed", base}};
      const auto reports = imec::run_trials(cfg, f.trials, base, f.workers);
      if (!f.jsonl.empty()) {
        std::ofstream jl(f.jsonl);
        if (!jl) throw UsageError("cannot write " + f.jsonl);
        imec::write_jsonl(jl, reports);
      }
      out["kl"] = imec::to_json(imec::kl_report(reports));
      if (*bench) {
        out["summary"] = imec::to_json(imec::summarize(reports));
        out["speed"] = imec::to_json(imec::speed_report(reports));
        if (!sweep_list.empty()) {
          const auto curve = imec::threshold_sweep(cfg, parse_thresholds(sweep_list), f.trials, base, f.workers);
          auto points = nlohmann::json::array();
          for (const auto& p : curve)
            points.push_back({{"threshold", p.threshold},
                              {"error_rate", p.summary.error_rate.mean},
                              {"ci", p.summary.error_rate.ci95},
                              {"completed", p.summary.completed},
                              {"failed", p.summary.failed}});
          out["sweep"] = points;
          if (!csv_path.empty()) write_output(csv_path, imec::sweep_csv(curve));
        }
      }
      write_output(out_path, out.dump(2) + "\n");
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  } catch (const imec::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCodec;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed input: " << e.what() << "\n";
    return kExitCodec;
  }
  return kExitUsage;
}
