// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>

namespace qsam {

inline constexpr std::size_t kBlockSize = 64;
inline constexpr std::size_t kQstSize = 128;

// Natural (row-major) index of the k-th coefficient in zig-zag order.
extern const std::array<std::uint8_t, kBlockSize> kZigzagToNatural;

// Example tables from Annex K of ISO/IEC 10918-1, natural order.
extern const std::array<std::uint16_t, kBlockSize> kAnnexKLuminance;
extern const std::array<std::uint16_t, kBlockSize> kAnnexKChrominance;

// Wire order -> natural order.
std::array<std::uint16_t, kBlockSize> dezigzag(std::span<const std::uint16_t, kBlockSize> wire);
// Natural order -> wire order.
std::array<std::uint16_t, kBlockSize> zigzag(std::span<const std::uint16_t, kBlockSize> natural);

// Quantization-steps tensor: 8x8x2, channel 0 luminance, channel 1
// chrominance, natural order. Entries always lie in [1, 255].
class Qst {
 public:
  // All-ones tensor (the identity quantizer).
  Qst();

  // Throws InvalidArgument when any entry is 0.
  static Qst from_steps(std::span<const std::uint8_t, kQstSize> steps);
  static Qst from_tables(std::span<const std::uint8_t, kBlockSize> luma,
                         std::span<const std::uint8_t, kBlockSize> chroma);

  std::uint8_t at(std::size_t channel, std::size_t row, std::size_t col) const {
    return steps_[channel * kBlockSize + row * 8 + col];
  }
  std::span<const std::uint8_t, kBlockSize> channel(std::size_t c) const {
    return std::span<const std::uint8_t, kBlockSize>(steps_.data() + c * kBlockSize, kBlockSize);
  }
  const std::array<std::uint8_t, kQstSize>& steps() const { return steps_; }

  auto operator<=>(const Qst&) const = default;

 private:
  std::array<std::uint8_t, kQstSize> steps_;
};

std::string to_hex(const Qst& q);

}  // namespace qsam

template <>
struct std::hash<qsam::Qst> {
  std::size_t operator()(const qsam::Qst& q) const noexcept;
};
