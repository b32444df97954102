// Hides a short message in a character-level order-2 Markov channel and recovers it.
//
//   hide_and_recover CORPUS [MESSAGE]

#include <iostream>
#include <string>

#include "imec/imec.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: hide_and_recover CORPUS [MESSAGE]\n";
    return 1;
  }
  const std::string message = argc > 2 ? argv[2] : "meet at dawn";

  imec::ChannelSpec spec;
  spec.kind = imec::ChannelSpec::Kind::markov;
  spec.order = 2;
  spec.alpha = 0.01;
  spec.path = argv[1];

  imec::Rng rng(2024);
  const auto bits = imec::bytes_to_bits(message);
  const auto key = imec::gen_key(bits.size(), rng);
  imec::CodecConfig cfg;  // 10-bit blocks, 0.1-bit threshold

  // Both sides start from the same public prompt.
  const std::string prompt = "the";
  auto primed = [&] {
    auto ch = imec::make_channel(spec);
    auto* markov = dynamic_cast<imec::MarkovChannel*>(ch.get());
    for (char c : prompt) ch->append(static_cast<imec::TokenId>(markov->alphabet().find(c)));
    return ch;
  };

  auto sender = primed();
  const auto tokens = imec::encode(imec::encrypt(bits, key, cfg.block_bits), *sender, cfg, rng);
  std::cout << "stegotext (" << tokens.size() << " tokens):\n" << prompt << sender->render(tokens) << "\n\n";

  auto receiver = primed();
  const auto decoded = imec::decode(tokens, *receiver, cfg, bits.size());
  std::cout << "recovered: " << imec::bits_to_bytes(imec::decrypt(decoded.bits, key)) << "\n";
}
