#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "pcdiff/errors.hpp"
#include "pcdiff/rng.hpp"

namespace pcdiff {

/// 128-bit credential that drives the fuser layers' weight generation.
///
/// Bit 0 is the most significant bit of the first hex nibble.
class FuserKey {
 public:
  static constexpr std::size_t kBits = 128;

  FuserKey() = default;

  static FuserKey from_bits(const std::vector<bool>& bits) {
    if (bits.size() != kBits) {
      throw KeyError("FuserKey must have " + std::to_string(kBits) + " bits, got " + std::to_string(bits.size()));
    }
    FuserKey key;
    for (std::size_t i = 0; i < kBits; ++i) key.set_bit(i, bits[i]);
    return key;
  }

  static FuserKey from_hex(std::string_view hex) {
    if (hex.size() != kBits / 4) {
      throw KeyError("FuserKey hex must be " + std::to_string(kBits / 4) + " characters, got " +
                     std::to_string(hex.size()));
    }
    FuserKey key;
    for (std::size_t i = 0; i < hex.size(); ++i) {
      const int nibble = hex_value(hex[i]);
      if (nibble < 0) throw KeyError(std::string("FuserKey hex has invalid character '") + hex[i] + "'");
      for (std::size_t b = 0; b < 4; ++b) key.set_bit(4 * i + b, (nibble >> (3 - b)) & 1);
    }
    return key;
  }

  bool bit(std::size_t i) const { return (bytes_.at(i / 8) >> (7 - i % 8)) & 1U; }

  void set_bit(std::size_t i, bool v) {
    const auto mask = static_cast<std::uint8_t>(1U << (7 - i % 8));
    bytes_.at(i / 8) = v ? (bytes_[i / 8] | mask) : (bytes_[i / 8] & static_cast<std::uint8_t>(~mask));
  }

  void flip(std::size_t i) { set_bit(i, !bit(i)); }

  std::string hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(kBits / 4);
    for (auto b : bytes_) {
      out.push_back(digits[b >> 4]);
      out.push_back(digits[b & 0xF]);
    }
    return out;
  }

  /// +1 for set bits, -1 for clear bits.
  std::vector<double> bipolar() const {
    std::vector<double> v(kBits);
    for (std::size_t i = 0; i < kBits; ++i) v[i] = bit(i) ? 1.0 : -1.0;
    return v;
  }

  const std::array<std::uint8_t, 16>& bytes() const noexcept { return bytes_; }

  friend bool operator==(const FuserKey&, const FuserKey&) = default;

 private:
  static int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  }

  std::array<std::uint8_t, 16> bytes_{};
};

inline FuserKey parse_key(std::string_view hex) { return FuserKey::from_hex(hex); }

inline FuserKey generate_key(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x4B4559));
  FuserKey key;
  for (std::size_t word = 0; word < 2; ++word) {
    const std::uint64_t x = rng.next_u64();
    for (std::size_t b = 0; b < 64; ++b) key.set_bit(64 * word + b, (x >> (63 - b)) & 1U);
  }
  return key;
}

inline std::size_t hamming_distance(const FuserKey& a, const FuserKey& b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < 16; ++i) d += std::bitset<8>(a.bytes()[i] ^ b.bytes()[i]).count();
  return d;
}

/// Uniform random key that differs from `avoid` in at least one bit.
inline FuserKey random_wrong_key(Rng& rng, const FuserKey& avoid) {
  for (;;) {
    FuserKey key;
    for (std::size_t word = 0; word < 2; ++word) {
      const std::uint64_t x = rng.next_u64();
      for (std::size_t b = 0; b < 64; ++b) key.set_bit(64 * word + b, (x >> (63 - b)) & 1U);
    }
    if (!(key == avoid)) return key;
  }
}

/// Hex SHA-256 of salt || key bytes. The only form of the key that is ever persisted.
inline std::string key_fingerprint(const FuserKey& key, std::string_view salt) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw ResourceError("key_fingerprint: cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, salt.data(), salt.size()) == 1 &&
                  EVP_DigestUpdate(ctx, key.bytes().data(), key.bytes().size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw ResourceError("key_fingerprint: SHA-256 failed");
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(digits[digest[i] >> 4]);
    out.push_back(digits[digest[i] & 0xF]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural crack space

/// Up-sampling stages of the reference architecture the crack-space count assumes.
inline constexpr std::size_t kUpStages = 3;
inline constexpr std::int64_t kMaxEnumeration = 20;

/// One attacker guess about which decoder layers are genuine.
///
/// mid_pair: keep exactly the two mid-block slots in `mid_survivors` (of the
/// m + 2 indistinguishable ones); the up chain is left alone.
/// up_chain: per up stage s, `up_choice[s]` in [0, n]. 0 means the stage holds
/// no impostor; j > 0 names added up/down pair j - 1 as the impostor to strip.
/// Mid blocks are left alone.
struct RemovalHypothesis {
  enum class Kind { mid_pair, up_chain };
  Kind kind = Kind::mid_pair;
  std::array<std::size_t, 2> mid_survivors{};
  std::array<std::size_t, kUpStages> up_choice{};

  friend bool operator==(const RemovalHypothesis&, const RemovalHypothesis&) = default;
};

inline std::string describe(const RemovalHypothesis& h) {
  if (h.kind == RemovalHypothesis::Kind::mid_pair) {
    return "mid(" + std::to_string(h.mid_survivors[0]) + "," + std::to_string(h.mid_survivors[1]) + ")";
  }
  std::string s = "up(";
  for (std::size_t i = 0; i < kUpStages; ++i) s += (i ? "," : "") + std::to_string(h.up_choice[i]);
  return s + ")";
}

namespace detail {
inline void require_non_negative(std::int64_t m, std::int64_t n) {
  if (m < 0 || n < 0) {
    throw ConfigError("crack space: m and n must be non-negative, got m=" + std::to_string(m) +
                      " n=" + std::to_string(n));
  }
}
}  // namespace detail

/// C(m + 2, 2) + (n + 1)^3.
inline std::uint64_t combination_count(std::int64_t m, std::int64_t n) {
  detail::require_non_negative(m, n);
  const auto k = static_cast<std::uint64_t>(m) + 2;
  const auto u = static_cast<std::uint64_t>(n) + 1;
  return k * (k - 1) / 2 + u * u * u;
}

inline std::vector<RemovalHypothesis> enumerate_removals(std::int64_t m, std::int64_t n) {
  detail::require_non_negative(m, n);
  if (m > kMaxEnumeration || n > kMaxEnumeration) {
    throw ResourceError("enumerate_removals: m and n are limited to " + std::to_string(kMaxEnumeration) +
                        ", got m=" + std::to_string(m) + " n=" + std::to_string(n));
  }
  std::vector<RemovalHypothesis> out;
  const auto slots = static_cast<std::size_t>(m) + 2;
  for (std::size_t i = 0; i < slots; ++i)
    for (std::size_t j = i + 1; j < slots; ++j) {
      RemovalHypothesis h;
      h.kind = RemovalHypothesis::Kind::mid_pair;
      h.mid_survivors = {i, j};
      out.push_back(h);
    }
  const auto cand = static_cast<std::size_t>(n) + 1;
  std::array<std::size_t, kUpStages> choice{};
  for (;;) {
    RemovalHypothesis h;
    h.kind = RemovalHypothesis::Kind::up_chain;
    h.up_choice = choice;
    out.push_back(h);
    std::size_t s = kUpStages;
    while (s > 0) {
      --s;
      if (++choice[s] < cand) break;
      choice[s] = 0;
      if (s == 0) return out;
    }
  }
}

struct CrackEstimate {
  std::int64_t m = 0;
  std::int64_t n = 0;
  std::uint64_t combination_count = 0;
  double t_test = 0.0;
  double t_crack = 0.0;
};

inline CrackEstimate crack_time(std::int64_t m, std::int64_t n, double t_test) {
  if (!(t_test > 0.0)) throw ConfigError("crack_time: t_test must be positive, got " + std::to_string(t_test));
  CrackEstimate e;
  e.m = m;
  e.n = n;
  e.combination_count = combination_count(m, n);
  e.t_test = t_test;
  e.t_crack = t_test * static_cast<double>(e.combination_count);
  return e;
}

}  // namespace pcdiff
