// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qsam/qst.hpp"

namespace qsam::data {

// Interleaved 8-bit RGB, row-major, height x width x 3.
struct RgbImage {
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::vector<std::uint8_t> pixels;

  bool operator==(const RgbImage&) const = default;
};

struct LabeledImages {
  std::size_t classes = 0;
  std::vector<RgbImage> images;
  std::vector<int> labels;
};

struct SampleRecord {
  std::uint16_t label = 0;
  std::uint16_t qst_id = 0;
  RgbImage image;

  bool operator==(const SampleRecord&) const = default;
};

// In-memory form of the container file: a QST dictionary plus records that
// index into it.
struct Dataset {
  static constexpr std::uint16_t kVersion = 1;

  std::uint16_t classes = 0;
  std::vector<Qst> qsts;
  std::vector<SampleRecord> records;

  const Qst& qst_of(std::size_t record) const { return qsts.at(records.at(record).qst_id); }
  // Checks labels and qst ids are in range and the dictionary is distinct.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

// "QSDS" | u16 version | u16 classes | u16 QST count | QSTs (128 B each)
// | u64 record count | records (u16 label, u16 qst_id, u16 h, u16 w, RGB)
std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

// Compress every source image at every quality factor. Records are ordered
// image-major; dictionary entries follow qf_list.
Dataset build_compressed_dataset(const LabeledImages& source, std::span<const int> qf_list);

struct GratingBand {
  double freq_lo = 0.05;  // cycles per pixel, (0, 0.5]
  double freq_hi = 0.1;
  double angle_lo = 0.0;  // radians
  double angle_hi = 0.0;
  double gain_lo = 0.7;  // amplitude multiplier range
  double gain_hi = 1.0;
};

// Each image of the class draws one grating per band.
struct SyntheticClass {
  std::vector<GratingBand> bands;
};

struct SyntheticSpec {
  std::vector<SyntheticClass> classes;
  std::vector<GratingBand> clutter;  // drawn for every image, any class
  std::size_t width = 32;
  std::size_t height = 32;
  std::size_t per_class = 100;
  double amplitude = 50.0;  // peak grating amplitude in pixel units
  double noise = 12.0;      // per-pixel Gaussian noise sigma
  std::uint64_t seed = 0;
};

// Four classes: fine texture at 0, 45, 90 or 135 degrees under shared
// coarse clutter and noise. The texture sits in the high-frequency DCT
// coefficients, so coarse quantization erases most of it.
SyntheticSpec desk_spec(std::size_t per_class, std::uint64_t seed);

LabeledImages generate_synthetic(const SyntheticSpec& spec);

// 3073-byte records: 1 label byte + 3072 channel-planar pixel bytes (32x32).
LabeledImages read_cifar_binary(const std::filesystem::path& path);
LabeledImages decode_cifar_binary(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_cifar_binary(const LabeledImages& images);

// "Q75" for scaled Annex-K tables, "Qu:<hex prefix>" otherwise.
std::string qst_label(const Qst& q);

// CSV "qst,count,fraction" sorted by count desc, then QF asc.
std::string qst_report(const Dataset& ds);

// Class folders of PNG files: <dir>/<class name>/*.png, classes in sorted
// name order.
LabeledImages load_image_folder(const std::filesystem::path& dir);

RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& img);

}  // namespace qsam::data
