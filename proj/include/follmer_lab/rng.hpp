#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace flab {

/// Philox4x32-10 counter-based generator (Salmon et al.). Pure function of
/// (counter, key); no internal state.
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

/// Keyed random stream. Every draw is addressed by (sample index, slot), so a
/// sample's variates do not depend on how the index range is partitioned.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint32_t stream)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  /// Uniform in the open interval (0, 1) with 53 random bits.
  double uniform(std::uint64_t index, std::uint32_t slot) const {
    const auto w = words(index, slot);
    return to_open_unit((static_cast<std::uint64_t>(w[0]) << 32) | w[1]);
  }

  /// Standard normal by Box-Muller on the two 64-bit halves of one block.
  double normal(std::uint64_t index, std::uint32_t slot) const {
    const auto w = words(index, slot);
    const double u1 = to_open_unit((static_cast<std::uint64_t>(w[0]) << 32) | w[1]);
    const double u2 = to_open_unit((static_cast<std::uint64_t>(w[2]) << 32) | w[3]);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::array<std::uint32_t, 4> words(std::uint64_t index, std::uint32_t slot) const {
    return philox4x32({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                       stream_, slot},
                      key_);
  }

  static double to_open_unit(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
  }

  std::array<std::uint32_t, 2> key_;
  std::uint32_t stream_;
};

/// Stream identifiers, so independent consumers never share variates.
namespace streams {
inline constexpr std::uint32_t sample = 0x10000u;
inline constexpr std::uint32_t bridge = 0x20000u;    // + node index
inline constexpr std::uint32_t path_node = 0x30000u; // + node index
inline constexpr std::uint32_t dgamma = 0x40000u;    // + node index
inline constexpr std::uint32_t euler = 0x50000u;
inline constexpr std::uint32_t conditional = 0x60000u;
}  // namespace streams

}  // namespace flab
