// SPDX-License-Identifier: Apache-2.0
//
// JPEG marker-level parsing: quantization tables (DQT) and frame headers
// (SOF0/SOF1/SOF2). Entropy-coded data is skipped, never decoded.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "qsam/qst.hpp"

namespace qsam::jpeg {

enum class Precision : std::uint8_t { Bits8 = 0, Bits16 = 1 };

struct QuantTable {
  std::uint8_t id = 0;  // destination 0..3
  Precision precision = Precision::Bits8;
  std::array<std::uint16_t, kBlockSize> steps{};  // natural order
  std::size_t offset = 0;  // byte offset of the Pq/Tq byte in the stream

  bool operator==(const QuantTable&) const = default;
};

struct FrameComponent {
  std::uint8_t id = 0;
  std::uint8_t quant_table = 0;
  std::uint8_t h_sampling = 1;
  std::uint8_t v_sampling = 1;
};

struct FrameInfo {
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::vector<FrameComponent> components;
  bool progressive = false;
  // Offset of the first SOS marker; DQT segments defined before it are the
  // ones in effect for decoding.
  std::optional<std::size_t> first_scan_offset;
};

std::vector<QuantTable> parse_quant_tables(std::span<const std::uint8_t> bytes);
FrameInfo read_frame_info(std::span<const std::uint8_t> bytes);

enum class ChromaMode { Strict, Lenient };

struct AssembledQst {
  Qst qst;
  bool clamped = false;  // a 16-bit step above 255 was clamped
};

AssembledQst assemble_qst(std::span<const QuantTable> tables, const FrameInfo& frame,
                          ChromaMode mode = ChromaMode::Strict);

// Convenience: parse + frame + assemble in one go.
AssembledQst extract_qst(std::span<const std::uint8_t> bytes, ChromaMode mode = ChromaMode::Strict);

struct QstClass {
  std::optional<int> qf;  // set iff the QST is a scaled Annex-K table pair
  bool is_default() const { return qf.has_value(); }
};

QstClass classify_qst(const Qst& q);

// Serializes tables as one DQT segment per call (test and tooling helper).
std::vector<std::uint8_t> encode_dqt_segment(std::span<const QuantTable> tables);

}  // namespace qsam::jpeg
