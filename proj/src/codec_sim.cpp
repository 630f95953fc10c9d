// SPDX-License-Identifier: Apache-2.0
#include "qsam/codec_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "qsam/error.hpp"

namespace qsam::codec {
namespace {

// basis[u][x] = a(u) cos((2x + 1) u pi / 16), orthonormal rows.
const std::array<std::array<double, 8>, 8>& dct_basis() {
  static const auto basis = [] {
    std::array<std::array<double, 8>, 8> b{};
    for (int u = 0; u < 8; ++u) {
      const double a = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) b[u][x] = a * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
    return b;
  }();
  return basis;
}

double clamp255(double v) { return std::clamp(v, 0.0, 255.0); }

}  // namespace

Block8 dct2d(const Block8& block, LevelShift shift) {
  const auto& b = dct_basis();
  const double offset = shift == LevelShift::Pixel ? 128.0 : 0.0;
  Block8 tmp{};
  // rows: tmp[y][u] = sum_x block[y][x] b[u][x]
  for (int y = 0; y < 8; ++y) {
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) s += (block[y * 8 + x] - offset) * b[u][x];
      tmp[y * 8 + u] = s;
    }
  }
  Block8 out{};
  for (int v = 0; v < 8; ++v) {
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) s += b[v][y] * tmp[y * 8 + u];
      out[v * 8 + u] = s;
    }
  }
  return out;
}

Block8 idct2d(const Block8& coeffs, LevelShift shift) {
  const auto& b = dct_basis();
  const double offset = shift == LevelShift::Pixel ? 128.0 : 0.0;
  Block8 tmp{};
  for (int v = 0; v < 8; ++v) {
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u) s += coeffs[v * 8 + u] * b[u][x];
      tmp[v * 8 + x] = s;
    }
  }
  Block8 out{};
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int v = 0; v < 8; ++v) s += b[v][y] * tmp[v * 8 + x];
      out[y * 8 + x] = s + offset;
    }
  }
  return out;
}

Block8 quantize_dequantize(const Block8& coeffs, std::span<const double, kBlockSize> steps) {
  Block8 out{};
  for (std::size_t k = 0; k < kBlockSize; ++k) out[k] = std::round(coeffs[k] / steps[k]) * steps[k];
  return out;
}

Block8 quantize_dequantize(const Block8& coeffs, std::span<const std::uint8_t, kBlockSize> steps) {
  std::array<double, kBlockSize> s{};
  std::copy(steps.begin(), steps.end(), s.begin());
  return quantize_dequantize(coeffs, std::span<const double, kBlockSize>(s));
}

Qst scale_default_table(int qf) {
  if (qf < 1 || qf > 100) fail(ErrorCode::QfOutOfRange, "quality factor " + std::to_string(qf));
  const long scale = qf < 50 ? 5000 / qf : 200 - 2 * qf;
  std::array<std::uint8_t, kQstSize> steps{};
  for (std::size_t k = 0; k < kBlockSize; ++k) {
    const long luma = (kAnnexKLuminance[k] * scale + 50) / 100;
    const long chroma = (kAnnexKChrominance[k] * scale + 50) / 100;
    steps[k] = static_cast<std::uint8_t>(std::clamp(luma, 1L, 255L));
    steps[kBlockSize + k] = static_cast<std::uint8_t>(std::clamp(chroma, 1L, 255L));
  }
  return Qst::from_steps(steps);
}

PlanarImage::PlanarImage(std::size_t w, std::size_t h, ColorSpace s) : width(w), height(h), space(s) {
  for (auto& p : planes) p.assign(w * h, 0.0);
}

PlanarImage from_interleaved_rgb(std::span<const std::uint8_t> rgb, std::size_t width, std::size_t height) {
  if (rgb.size() != width * height * 3) {
    fail(ErrorCode::ShapeMismatch, "RGB buffer size does not match " + std::to_string(width) + "x" +
                                       std::to_string(height));
  }
  PlanarImage img(width, height, ColorSpace::Rgb);
  for (std::size_t i = 0; i < width * height; ++i) {
    for (std::size_t c = 0; c < 3; ++c) img.planes[c][i] = rgb[3 * i + c];
  }
  return img;
}

std::vector<std::uint8_t> to_interleaved_rgb(const PlanarImage& img) {
  std::vector<std::uint8_t> out(img.width * img.height * 3);
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      out[3 * i + c] = static_cast<std::uint8_t>(std::lround(clamp255(img.planes[c][i])));
    }
  }
  return out;
}

PlanarImage rgb_to_ycbcr(const PlanarImage& img) {
  PlanarImage out(img.width, img.height, ColorSpace::YCbCr);
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    const double r = img.planes[0][i], g = img.planes[1][i], b = img.planes[2][i];
    out.planes[0][i] = clamp255(0.299 * r + 0.587 * g + 0.114 * b);
    out.planes[1][i] = clamp255(128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b);
    out.planes[2][i] = clamp255(128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b);
  }
  return out;
}

PlanarImage ycbcr_to_rgb(const PlanarImage& img) {
  PlanarImage out(img.width, img.height, ColorSpace::Rgb);
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    const double y = img.planes[0][i], cb = img.planes[1][i] - 128.0, cr = img.planes[2][i] - 128.0;
    out.planes[0][i] = clamp255(y + 1.402 * cr);
    out.planes[1][i] = clamp255(y - 0.344136 * cb - 0.714136 * cr);
    out.planes[2][i] = clamp255(y + 1.772 * cb);
  }
  return out;
}

void quantize_plane(std::vector<double>& plane, std::size_t width, std::size_t height,
                    std::span<const std::uint8_t, kBlockSize> steps) {
  const std::size_t bw = (width + 7) / 8, bh = (height + 7) / 8;
  for (std::size_t by = 0; by < bh; ++by) {
    for (std::size_t bx = 0; bx < bw; ++bx) {
      Block8 block{};
      for (std::size_t y = 0; y < 8; ++y) {
        const std::size_t sy = std::min(by * 8 + y, height - 1);
        for (std::size_t x = 0; x < 8; ++x) {
          const std::size_t sx = std::min(bx * 8 + x, width - 1);
          block[y * 8 + x] = plane[sy * width + sx];
        }
      }
      const Block8 rec = idct2d(quantize_dequantize(dct2d(block), steps));
      for (std::size_t y = 0; y < 8 && by * 8 + y < height; ++y) {
        for (std::size_t x = 0; x < 8 && bx * 8 + x < width; ++x) {
          plane[(by * 8 + y) * width + bx * 8 + x] = rec[y * 8 + x];
        }
      }
    }
  }
}

PlanarImage compress_simulate(const PlanarImage& img, const Qst& q, const SimulateOptions& opts) {
  if (img.width == 0 || img.height == 0) fail(ErrorCode::InvalidArgument, "empty image");
  if (opts.subsampling != ChromaSubsampling::None444) {
    fail(ErrorCode::InvalidArgument, "only 4:4:4 chroma sampling is supported");
  }
  PlanarImage work = opts.color_transform ? rgb_to_ycbcr(img) : img;
  for (std::size_t c = 0; c < 3; ++c) {
    quantize_plane(work.planes[c], work.width, work.height, q.channel(c == 0 ? 0 : 1));
    for (auto& v : work.planes[c]) v = clamp255(v);
  }
  return opts.color_transform ? ycbcr_to_rgb(work) : work;
}

}  // namespace qsam::codec
