#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "imec/error.hpp"
#include "imec/prob.hpp"

namespace imec {

/// One element per bit, each 0 or 1.
using BitString = std::vector<std::uint8_t>;

inline constexpr unsigned kMaxBlockBits = 20;

/// One-time-pad key. Never reuse a key across messages.
struct Key {
  BitString bits;

  std::size_t size() const noexcept { return bits.size(); }
  friend bool operator==(const Key&, const Key&) = default;
};

/// Encrypted message together with its B-bit block view.
struct Ciphertext {
  BitString bits;
  unsigned block_bits = 10;
  std::vector<std::uint32_t> blocks;

  std::size_t n_blocks() const noexcept { return blocks.size(); }
};

inline std::size_t block_count(std::size_t bit_length, unsigned block_bits) noexcept {
  return (bit_length + block_bits - 1) / block_bits;
}

inline void check_block_bits(unsigned block_bits) {
  if (block_bits < 1 || block_bits > kMaxBlockBits)
    throw Error("invalid-block-bits", "block size must be in [1, 20], got " + std::to_string(block_bits));
}

/// MSB-first within each block; the last block is zero-padded on the right.
inline std::vector<std::uint32_t> pack_blocks(std::span<const std::uint8_t> bits, unsigned block_bits) {
  check_block_bits(block_bits);
  std::vector<std::uint32_t> blocks(block_count(bits.size(), block_bits), 0);
  for (std::size_t i = 0; i < bits.size(); ++i) {
    std::size_t b = i / block_bits;
    unsigned shift = block_bits - 1 - static_cast<unsigned>(i % block_bits);
    blocks[b] |= static_cast<std::uint32_t>(bits[i] & 1u) << shift;
  }
  return blocks;
}

/// Inverse of pack_blocks; padding beyond `bit_length` is discarded.
inline BitString unpack_blocks(std::span<const std::uint32_t> blocks, unsigned block_bits,
                               std::size_t bit_length) {
  check_block_bits(block_bits);
  if (block_count(bit_length, block_bits) != blocks.size())
    throw Error("length-mismatch", "block count does not cover the requested bit length");
  BitString bits(bit_length);
  for (std::size_t i = 0; i < bit_length; ++i) {
    std::size_t b = i / block_bits;
    unsigned shift = block_bits - 1 - static_cast<unsigned>(i % block_bits);
    bits[i] = static_cast<std::uint8_t>((blocks[b] >> shift) & 1u);
  }
  return bits;
}

inline Key gen_key(std::size_t bit_length, Rng& rng) {
  if (bit_length == 0) throw Error("invalid-length", "key length must be positive");
  Key key;
  key.bits.resize(bit_length);
  for (auto& b : key.bits) b = rng.bit() ? 1 : 0;
  return key;
}

inline Ciphertext encrypt(std::span<const std::uint8_t> message_bits, const Key& key,
                          unsigned block_bits = 10) {
  if (message_bits.size() != key.size())
    throw Error("length-mismatch", "message has " + std::to_string(message_bits.size()) +
                                       " bits, key has " + std::to_string(key.size()));
  Ciphertext c;
  c.block_bits = block_bits;
  c.bits.resize(key.size());
  for (std::size_t i = 0; i < key.size(); ++i)
    c.bits[i] = static_cast<std::uint8_t>((message_bits[i] ^ key.bits[i]) & 1u);
  c.blocks = pack_blocks(c.bits, block_bits);
  return c;
}

inline BitString decrypt(std::span<const std::uint8_t> cipher_bits, const Key& key) {
  if (cipher_bits.size() != key.size())
    throw Error("length-mismatch", "ciphertext has " + std::to_string(cipher_bits.size()) +
                                       " bits, key has " + std::to_string(key.size()));
  BitString m(key.size());
  for (std::size_t i = 0; i < key.size(); ++i)
    m[i] = static_cast<std::uint8_t>((cipher_bits[i] ^ key.bits[i]) & 1u);
  return m;
}

inline BitString decrypt(const Ciphertext& c, const Key& key) { return decrypt(c.bits, key); }

/// Bytes to bits, MSB first.
inline BitString bytes_to_bits(std::string_view bytes) {
  BitString bits;
  bits.reserve(bytes.size() * 8);
  for (unsigned char byte : bytes)
    for (int k = 7; k >= 0; --k) bits.push_back(static_cast<std::uint8_t>((byte >> k) & 1u));
  return bits;
}

/// Bits to bytes, MSB first; a trailing partial byte is zero-padded.
inline std::string bits_to_bytes(std::span<const std::uint8_t> bits) {
  std::string out((bits.size() + 7) / 8, '\0');
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i] & 1u) out[i / 8] = static_cast<char>(out[i / 8] | (0x80 >> (i % 8)));
  return out;
}

/// Lowercase hex, four bits per digit, MSB first, zero-padded to a whole digit.
inline std::string key_to_hex(const Key& key) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string hex;
  for (std::size_t i = 0; i < key.size(); i += 4) {
    unsigned nibble = 0;
    for (std::size_t k = 0; k < 4; ++k)
      nibble = (nibble << 1) | (i + k < key.size() ? (key.bits[i + k] & 1u) : 0u);
    hex.push_back(kDigits[nibble]);
  }
  return hex;
}

/// Parses key_to_hex output. `bit_length` of 0 means four bits per digit.
inline Key key_from_hex(std::string_view hex, std::size_t bit_length = 0) {
  while (!hex.empty() && (hex.back() == '\n' || hex.back() == '\r' || hex.back() == ' '))
    hex.remove_suffix(1);
  if (hex.empty()) throw Error("invalid-key", "empty key");
  Key key;
  for (char ch : hex) {
    unsigned v;
    if (ch >= '0' && ch <= '9') v = static_cast<unsigned>(ch - '0');
    else if (ch >= 'a' && ch <= 'f') v = static_cast<unsigned>(ch - 'a' + 10);
    else if (ch >= 'A' && ch <= 'F') v = static_cast<unsigned>(ch - 'A' + 10);
    else throw Error("invalid-key", "key file is not hex");
    for (int k = 3; k >= 0; --k) key.bits.push_back(static_cast<std::uint8_t>((v >> k) & 1u));
  }
  if (bit_length != 0) {
    if (bit_length > key.bits.size() || bit_length + 4 <= key.bits.size())
      throw Error("length-mismatch", "key file does not hold " + std::to_string(bit_length) + " bits");
    key.bits.resize(bit_length);
  }
  return key;
}

}  // namespace imec
