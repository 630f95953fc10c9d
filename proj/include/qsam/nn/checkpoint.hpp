// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary container for named tensors:
//   "QSCK" | u32 version | u32 manifest length | manifest bytes (UTF-8)
//   | u32 entry count | entries
// entry: u16 name length | name | u8 rank | u64 dims[rank] | f64 data[]
// All integers and doubles are little-endian.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qsam/nn/tensor.hpp"

namespace qsam::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;

  bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string manifest;  // free-form layer manifest (JSON in practice)
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;

  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace qsam::nn
