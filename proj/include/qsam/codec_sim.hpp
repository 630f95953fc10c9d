// SPDX-License-Identifier: Apache-2.0
//
// Lossy half of JPEG: colour transform, 8x8 DCT, quantize/dequantize and the
// inverse path. Entropy coding is lossless and therefore not simulated.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "qsam/qst.hpp"

namespace qsam::codec {

using Block8 = std::array<double, kBlockSize>;

// Pixel mode applies the JPEG level shift (-128 before the forward
// transform, +128 after the inverse); Coefficient mode is the bare
// orthonormal transform.
enum class LevelShift { Pixel, Coefficient };

Block8 dct2d(const Block8& block, LevelShift shift = LevelShift::Pixel);
Block8 idct2d(const Block8& coeffs, LevelShift shift = LevelShift::Pixel);

// c -> round(c / q) * q, ties away from zero.
Block8 quantize_dequantize(const Block8& coeffs, std::span<const double, kBlockSize> steps);
Block8 quantize_dequantize(const Block8& coeffs, std::span<const std::uint8_t, kBlockSize> steps);

// IJG quality scaling of the Annex-K tables.
Qst scale_default_table(int qf);

enum class ColorSpace { Rgb, YCbCr };
enum class ChromaSubsampling { None444, Sub420 };  // only None444 is implemented

// Three full-resolution planes, values in [0, 255].
struct PlanarImage {
  std::size_t width = 0;
  std::size_t height = 0;
  ColorSpace space = ColorSpace::Rgb;
  std::array<std::vector<double>, 3> planes;

  PlanarImage() = default;
  PlanarImage(std::size_t w, std::size_t h, ColorSpace s);

  double& at(std::size_t c, std::size_t y, std::size_t x) { return planes[c][y * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return planes[c][y * width + x]; }
};

// Interleaved 8-bit RGB <-> planar conversion.
PlanarImage from_interleaved_rgb(std::span<const std::uint8_t> rgb, std::size_t width, std::size_t height);
std::vector<std::uint8_t> to_interleaved_rgb(const PlanarImage& img);

PlanarImage rgb_to_ycbcr(const PlanarImage& img);
PlanarImage ycbcr_to_rgb(const PlanarImage& img);

struct SimulateOptions {
  // When false the input is treated as already being YCbCr and the output
  // stays in YCbCr.
  bool color_transform = true;
  ChromaSubsampling subsampling = ChromaSubsampling::None444;
};

PlanarImage compress_simulate(const PlanarImage& img, const Qst& q, const SimulateOptions& opts = {});

// Quantize every 8x8 block of one plane in place (edge-replicated padding,
// then cropped). Exposed for per-plane diagnostics.
void quantize_plane(std::vector<double>& plane, std::size_t width, std::size_t height,
                    std::span<const std::uint8_t, kBlockSize> steps);

}  // namespace qsam::codec
