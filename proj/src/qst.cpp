// SPDX-License-Identifier: Apache-2.0
#include "qsam/qst.hpp"

#include <algorithm>

#include "qsam/error.hpp"

namespace qsam {

const std::array<std::uint8_t, kBlockSize> kZigzagToNatural = {
    0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,
    12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6,  7,  14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

const std::array<std::uint16_t, kBlockSize> kAnnexKLuminance = {
    16, 11, 10, 16, 24,  40,  51,  61,
    12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,
    14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,
    24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99};

const std::array<std::uint16_t, kBlockSize> kAnnexKChrominance = {
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99};

std::array<std::uint16_t, kBlockSize> dezigzag(std::span<const std::uint16_t, kBlockSize> wire) {
  std::array<std::uint16_t, kBlockSize> natural{};
  for (std::size_t k = 0; k < kBlockSize; ++k) natural[kZigzagToNatural[k]] = wire[k];
  return natural;
}

std::array<std::uint16_t, kBlockSize> zigzag(std::span<const std::uint16_t, kBlockSize> natural) {
  std::array<std::uint16_t, kBlockSize> wire{};
  for (std::size_t k = 0; k < kBlockSize; ++k) wire[k] = natural[kZigzagToNatural[k]];
  return wire;
}

Qst::Qst() { steps_.fill(1); }

Qst Qst::from_steps(std::span<const std::uint8_t, kQstSize> steps) {
  if (std::find(steps.begin(), steps.end(), std::uint8_t{0}) != steps.end()) {
    fail(ErrorCode::InvalidArgument, "quantization step of 0 in QST");
  }
  Qst q;
  std::copy(steps.begin(), steps.end(), q.steps_.begin());
  return q;
}

Qst Qst::from_tables(std::span<const std::uint8_t, kBlockSize> luma,
                     std::span<const std::uint8_t, kBlockSize> chroma) {
  std::array<std::uint8_t, kQstSize> all{};
  std::copy(luma.begin(), luma.end(), all.begin());
  std::copy(chroma.begin(), chroma.end(), all.begin() + kBlockSize);
  return from_steps(all);
}

std::string to_hex(const Qst& q) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * kQstSize);
  for (auto s : q.steps()) {
    out.push_back(kDigits[s >> 4]);
    out.push_back(kDigits[s & 0xF]);
  }
  return out;
}

}  // namespace qsam

std::size_t std::hash<qsam::Qst>::operator()(const qsam::Qst& q) const noexcept {
  // FNV-1a
  std::size_t h = 1469598103934665603ull;
  for (auto s : q.steps()) {
    h ^= s;
    h *= 1099511628211ull;
  }
  return h;
}
