// SPDX-License-Identifier: Apache-2.0
#include "qsam/nn/checkpoint.hpp"

#include <algorithm>

#include "qsam/byte_io.hpp"
#include "qsam/error.hpp"

namespace qsam::nn {
namespace {
constexpr char kMagic[4] = {'Q', 'S', 'C', 'K'};
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  for (char c : kMagic) w.put<std::uint8_t>(static_cast<std::uint8_t>(c));
  w.put<std::uint32_t>(Checkpoint::kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.manifest.size()));
  w.put_string(ckpt.manifest);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > 0xFFFF) fail(ErrorCode::InvalidArgument, "tensor name too long");
    if (t.rank() > 0xFF) fail(ErrorCode::InvalidArgument, "tensor rank too large");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_string(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.put<std::uint64_t>(d);
    for (double v : t.values()) w.put<double>(v);
  }
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, ErrorCode::BadContainer);
  const auto magic = r.get_bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) fail(ErrorCode::BadContainer, "not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion) {
    fail(ErrorCode::BadContainer, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.manifest = r.get_string(r.get<std::uint32_t>());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t e = 0; e < count; ++e) {
    NamedTensor nt;
    nt.name = r.get_string(r.get<std::uint16_t>());
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>();
      if (__builtin_mul_overflow(n, d, &n)) fail(ErrorCode::BadContainer, "tensor '" + nt.name + "' too large");
    }
    if (n > r.remaining() / sizeof(double)) fail(ErrorCode::BadContainer, "tensor '" + nt.name + "' truncated");
    std::vector<double> data(n);
    for (auto& v : data) v = r.get<double>();
    nt.tensor = Tensor(std::move(shape), std::move(data));
    ckpt.tensors.push_back(std::move(nt));
  }
  if (r.remaining() != 0) fail(ErrorCode::BadContainer, "trailing bytes after checkpoint");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace qsam::nn
