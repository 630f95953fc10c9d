// SPDX-License-Identifier: Apache-2.0
#include "qsam/jpeg_io.hpp"

#include <algorithm>
#include <functional>
#include <string>

#include "qsam/codec_sim.hpp"
#include "qsam/error.hpp"

namespace qsam::jpeg {
namespace {

constexpr std::uint8_t kSOI = 0xD8;
constexpr std::uint8_t kEOI = 0xD9;
constexpr std::uint8_t kSOS = 0xDA;
constexpr std::uint8_t kDQT = 0xDB;
constexpr std::uint8_t kSOF0 = 0xC0;
constexpr std::uint8_t kSOF1 = 0xC1;
constexpr std::uint8_t kSOF2 = 0xC2;
constexpr std::uint8_t kTEM = 0x01;

bool is_rst(std::uint8_t m) { return m >= 0xD0 && m <= 0xD7; }

struct Segment {
  std::uint8_t marker;
  std::size_t marker_offset;  // offset of the 0xFF byte
  std::span<const std::uint8_t> payload;  // excludes the length field
  std::size_t payload_offset;
};

[[noreturn]] void malformed(const std::string& what, std::size_t at) {
  fail(ErrorCode::MalformedStream, what + " at byte " + std::to_string(at));
}

// Returns the offset just past the entropy-coded data that starts at `pos`,
// i.e. the offset of the next real marker's 0xFF byte.
std::size_t skip_entropy_coded(std::span<const std::uint8_t> b, std::size_t pos) {
  while (pos < b.size()) {
    if (b[pos] != 0xFF) {
      ++pos;
      continue;
    }
    std::size_t next = pos + 1;
    while (next < b.size() && b[next] == 0xFF) ++next;  // fill bytes
    if (next >= b.size()) break;
    const std::uint8_t m = b[next];
    if (m == 0x00 || is_rst(m)) {
      pos = next + 1;
      continue;
    }
    return next - 1;
  }
  malformed("entropy-coded data runs past end of stream", b.size());
}

// Walks every marker segment from SOI to EOI. The visitor returns false to
// stop early.
void walk(std::span<const std::uint8_t> b, const std::function<bool(const Segment&)>& visit) {
  if (b.size() < 2 || b[0] != 0xFF || b[1] != kSOI) malformed("missing SOI marker", 0);
  std::size_t pos = 2;
  while (true) {
    if (pos >= b.size()) malformed("stream ended before EOI", pos);
    if (b[pos] != 0xFF) malformed("expected marker", pos);
    const std::size_t marker_offset = pos;
    while (pos < b.size() && b[pos] == 0xFF) ++pos;
    if (pos >= b.size()) malformed("stream ended inside marker", pos);
    const std::uint8_t m = b[pos++];
    if (m == 0x00) malformed("stuffed zero outside entropy-coded data", marker_offset);
    if (m == kEOI) {
      visit(Segment{m, marker_offset, {}, pos});
      return;
    }
    if (m == kSOI) malformed("nested SOI", marker_offset);
    if (m == kTEM || is_rst(m)) {
      if (!visit(Segment{m, marker_offset, {}, pos})) return;
      continue;
    }
    if (pos + 2 > b.size()) malformed("truncated segment length", pos);
    const std::size_t len = (std::size_t{b[pos]} << 8) | b[pos + 1];
    if (len < 2) malformed("segment length below 2", pos);
    if (pos + len > b.size()) malformed("segment runs past end of stream", pos);
    Segment seg{m, marker_offset, b.subspan(pos + 2, len - 2), pos + 2};
    pos += len;
    if (!visit(seg)) return;
    if (m == kSOS) pos = skip_entropy_coded(b, pos);
  }
}

void parse_dqt(const Segment& seg, std::vector<QuantTable>& out) {
  const auto p = seg.payload;
  std::size_t i = 0;
  if (p.empty()) malformed("empty DQT segment", seg.payload_offset);
  while (i < p.size()) {
    const std::uint8_t pq = p[i] >> 4;
    const std::uint8_t tq = p[i] & 0x0F;
    const std::size_t table_offset = seg.payload_offset + i;
    if (pq > 1) {
      fail(ErrorCode::UnsupportedPrecisionValue,
           "DQT precision " + std::to_string(pq) + " at byte " + std::to_string(table_offset));
    }
    if (tq > 3) malformed("DQT destination above 3", table_offset);
    ++i;
    const std::size_t width = pq == 0 ? 1 : 2;
    if (i + width * kBlockSize > p.size()) malformed("DQT table exceeds segment length", table_offset);
    std::array<std::uint16_t, kBlockSize> wire{};
    for (std::size_t k = 0; k < kBlockSize; ++k) {
      wire[k] = width == 1 ? p[i + k] : static_cast<std::uint16_t>((p[i + 2 * k] << 8) | p[i + 2 * k + 1]);
      if (wire[k] == 0) malformed("zero quantization step", table_offset);
    }
    i += width * kBlockSize;
    out.push_back(QuantTable{tq, pq == 0 ? Precision::Bits8 : Precision::Bits16, dezigzag(wire), table_offset});
  }
}

FrameInfo parse_sof(const Segment& seg) {
  const auto p = seg.payload;
  if (p.size() < 6) malformed("truncated frame header", seg.payload_offset);
  FrameInfo f;
  f.height = static_cast<std::uint16_t>((p[1] << 8) | p[2]);
  f.width = static_cast<std::uint16_t>((p[3] << 8) | p[4]);
  const std::size_t n = p[5];
  if (n < 1 || n > 4) malformed("frame component count outside 1..4", seg.payload_offset);
  if (p.size() != 6 + 3 * n) malformed("frame header length inconsistent with component count", seg.payload_offset);
  for (std::size_t c = 0; c < n; ++c) {
    const auto* rec = p.data() + 6 + 3 * c;
    FrameComponent comp{rec[0], rec[2], static_cast<std::uint8_t>(rec[1] >> 4),
                        static_cast<std::uint8_t>(rec[1] & 0x0F)};
    if (comp.quant_table > 3) malformed("component quant table id above 3", seg.payload_offset);
    f.components.push_back(comp);
  }
  f.progressive = seg.marker == kSOF2;
  return f;
}

}  // namespace

std::vector<QuantTable> parse_quant_tables(std::span<const std::uint8_t> bytes) {
  std::vector<QuantTable> tables;
  walk(bytes, [&](const Segment& seg) {
    if (seg.marker == kDQT) parse_dqt(seg, tables);
    return true;
  });
  return tables;
}

FrameInfo read_frame_info(std::span<const std::uint8_t> bytes) {
  std::optional<FrameInfo> frame;
  walk(bytes, [&](const Segment& seg) {
    if (seg.marker == kSOF0 || seg.marker == kSOF1 || seg.marker == kSOF2) {
      if (!frame) frame = parse_sof(seg);
    } else if (seg.marker == kSOS) {
      if (!frame) fail(ErrorCode::NoFrameHeader, "SOS before any SOF0/SOF2");
      if (!frame->first_scan_offset) frame->first_scan_offset = seg.marker_offset;
    }
    return true;
  });
  if (!frame) fail(ErrorCode::NoFrameHeader, "no SOF0/SOF2 segment");
  return *frame;
}

AssembledQst assemble_qst(std::span<const QuantTable> tables, const FrameInfo& frame, ChromaMode mode) {
  const std::size_t n = frame.components.size();
  if (n != 1 && n != 3) {
    fail(ErrorCode::UnsupportedComponents, "QST needs 1 or 3 components, frame has " + std::to_string(n));
  }
  // Last definition of an id before the first scan wins.
  auto lookup = [&](std::uint8_t id) -> const QuantTable& {
    const QuantTable* found = nullptr;
    for (const auto& t : tables) {
      if (t.id != id) continue;
      if (frame.first_scan_offset && t.offset > *frame.first_scan_offset) continue;
      found = &t;
    }
    if (!found) fail(ErrorCode::MissingTable, "quant table " + std::to_string(id) + " is not defined");
    return *found;
  };

  const QuantTable& luma = lookup(frame.components[0].quant_table);
  const QuantTable* chroma = &luma;
  if (n == 3) {
    const QuantTable& cb = lookup(frame.components[1].quant_table);
    const QuantTable& cr = lookup(frame.components[2].quant_table);
    if (mode == ChromaMode::Strict && cb.steps != cr.steps) {
      fail(ErrorCode::MismatchedChromaTables, "Cb and Cr bind different quantization tables");
    }
    chroma = &cb;
  }

  AssembledQst out;
  std::array<std::uint8_t, kQstSize> steps{};
  for (std::size_t k = 0; k < kBlockSize; ++k) {
    for (std::size_t c = 0; c < 2; ++c) {
      const std::uint16_t s = (c == 0 ? luma : *chroma).steps[k];
      if (s > 255) out.clamped = true;
      steps[c * kBlockSize + k] = static_cast<std::uint8_t>(std::min<std::uint16_t>(s, 255));
    }
  }
  out.qst = Qst::from_steps(steps);
  return out;
}

AssembledQst extract_qst(std::span<const std::uint8_t> bytes, ChromaMode mode) {
  const auto tables = parse_quant_tables(bytes);
  return assemble_qst(tables, read_frame_info(bytes), mode);
}

QstClass classify_qst(const Qst& q) {
  static const std::array<Qst, 100> scaled = [] {
    std::array<Qst, 100> all;
    for (int qf = 1; qf <= 100; ++qf) all[qf - 1] = codec::scale_default_table(qf);
    return all;
  }();
  for (int qf = 100; qf >= 1; --qf) {
    if (scaled[qf - 1] == q) return QstClass{qf};
  }
  return QstClass{};
}

std::vector<std::uint8_t> encode_dqt_segment(std::span<const QuantTable> tables) {
  std::vector<std::uint8_t> payload;
  for (const auto& t : tables) {
    const bool wide = t.precision == Precision::Bits16;
    payload.push_back(static_cast<std::uint8_t>((wide ? 0x10 : 0x00) | (t.id & 0x0F)));
    for (auto s : zigzag(t.steps)) {
      if (wide) payload.push_back(static_cast<std::uint8_t>(s >> 8));
      payload.push_back(static_cast<std::uint8_t>(s & 0xFF));
    }
  }
  const std::size_t len = payload.size() + 2;
  if (len > 0xFFFF) fail(ErrorCode::InvalidArgument, "DQT segment too long");
  std::vector<std::uint8_t> seg(len + 2);
  seg[0] = 0xFF;
  seg[1] = kDQT;
  seg[2] = static_cast<std::uint8_t>(len >> 8);
  seg[3] = static_cast<std::uint8_t>(len & 0xFF);
  std::copy(payload.begin(), payload.end(), seg.begin() + 4);
  return seg;
}

}  // namespace qsam::jpeg
