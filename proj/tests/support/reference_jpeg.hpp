// SPDX-License-Identifier: Apache-2.0
//
// Test-only JPEG writer backed by libjpeg, used as an independent encoder
// whose DQT segments the parser must reproduce.
#pragma once

#include <cstdint>
#include <vector>

namespace qsam::testing {

struct ReferenceJpegOptions {
  int quality = 75;
  int components = 3;  // 1 (grayscale) or 3 (YCbCr)
  bool progressive = false;
  int restart_interval = 0;  // in MCUs; 0 disables restart markers
};

// Encodes a width x height image (interleaved, `components` bytes per
// pixel) with the standard Annex-K tables scaled to `quality`.
std::vector<std::uint8_t> encode_reference_jpeg(const std::vector<std::uint8_t>& pixels, int width, int height,
                                                const ReferenceJpegOptions& opts = {});

// Deterministic textured test image with `components` channels.
std::vector<std::uint8_t> test_pattern(int width, int height, int components);

}  // namespace qsam::testing
