// SPDX-License-Identifier: Apache-2.0
#include "qsam/data.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "qsam/byte_io.hpp"
#include "qsam/codec_sim.hpp"
#include "qsam/error.hpp"
#include "qsam/jpeg_io.hpp"
#include "qsam/parallel.hpp"

namespace qsam::data {
namespace {

constexpr char kMagic[4] = {'Q', 'S', 'D', 'S'};
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

}  // namespace

void Dataset::validate() const {
  for (std::size_t i = 0; i < qsts.size(); ++i) {
    for (std::size_t j = i + 1; j < qsts.size(); ++j) {
      if (qsts[i] == qsts[j]) fail(ErrorCode::BadContainer, "duplicate QST dictionary entry");
    }
  }
  for (const auto& r : records) {
    if (r.label >= classes) fail(ErrorCode::BadContainer, "record label " + std::to_string(r.label) + " >= classes");
    if (r.qst_id >= qsts.size()) fail(ErrorCode::BadContainer, "record qst_id out of range");
    if (r.image.pixels.size() != std::size_t{r.image.width} * r.image.height * 3) {
      fail(ErrorCode::BadContainer, "record pixel count does not match its size");
    }
  }
}

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ds.validate();
  if (ds.qsts.size() > 0xFFFF) fail(ErrorCode::InvalidArgument, "too many QSTs for the container");
  ByteWriter w;
  for (char c : kMagic) w.put<std::uint8_t>(static_cast<std::uint8_t>(c));
  w.put<std::uint16_t>(Dataset::kVersion);
  w.put<std::uint16_t>(ds.classes);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(ds.qsts.size()));
  for (const auto& q : ds.qsts) w.put_bytes(q.steps());
  w.put<std::uint64_t>(ds.records.size());
  for (const auto& r : ds.records) {
    w.put<std::uint16_t>(r.label);
    w.put<std::uint16_t>(r.qst_id);
    w.put<std::uint16_t>(r.image.height);
    w.put<std::uint16_t>(r.image.width);
    w.put_bytes(r.image.pixels);
  }
  return std::move(w.bytes());
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, ErrorCode::BadContainer);
  const auto magic = r.get_bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) fail(ErrorCode::BadContainer, "not a QSDS container");
  const auto version = r.get<std::uint16_t>();
  if (version != Dataset::kVersion) fail(ErrorCode::BadContainer, "unsupported container version");
  Dataset ds;
  ds.classes = r.get<std::uint16_t>();
  const auto nq = r.get<std::uint16_t>();
  for (std::size_t i = 0; i < nq; ++i) {
    const auto raw = r.get_bytes(kQstSize);
    try {
      ds.qsts.push_back(Qst::from_steps(raw.first<kQstSize>()));
    } catch (const Error&) {
      fail(ErrorCode::BadContainer, "QST dictionary entry with a zero step");
    }
  }
  const auto count = r.get<std::uint64_t>();
  if (count > r.remaining() / 8) fail(ErrorCode::BadContainer, "record count exceeds data");
  ds.records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    SampleRecord rec;
    rec.label = r.get<std::uint16_t>();
    rec.qst_id = r.get<std::uint16_t>();
    rec.image.height = r.get<std::uint16_t>();
    rec.image.width = r.get<std::uint16_t>();
    const auto px = r.get_bytes(std::size_t{rec.image.width} * rec.image.height * 3);
    rec.image.pixels.assign(px.begin(), px.end());
    ds.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) fail(ErrorCode::BadContainer, "trailing bytes after records");
  ds.validate();
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) { write_file(path, encode_dataset(ds)); }

Dataset read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

Dataset build_compressed_dataset(const LabeledImages& source, std::span<const int> qf_list) {
  if (qf_list.empty()) fail(ErrorCode::EmptyQfList, "no quality factors given");
  if (source.images.size() != source.labels.size()) {
    fail(ErrorCode::ShapeMismatch, "image and label counts differ");
  }
  Dataset ds;
  ds.classes = static_cast<std::uint16_t>(source.classes);
  for (int qf : qf_list) {
    Qst q = codec::scale_default_table(qf);
    if (std::find(ds.qsts.begin(), ds.qsts.end(), q) != ds.qsts.end()) {
      fail(ErrorCode::InvalidArgument, "quality factor " + std::to_string(qf) + " repeats a QST already listed");
    }
    ds.qsts.push_back(q);
  }
  const std::size_t nq = ds.qsts.size();
  ds.records.resize(source.images.size() * nq);
  parallel_for(source.images.size(), [&](std::size_t i) {
    const RgbImage& img = source.images[i];
    const auto planar = codec::from_interleaved_rgb(img.pixels, img.width, img.height);
    for (std::size_t k = 0; k < nq; ++k) {
      SampleRecord& rec = ds.records[i * nq + k];
      rec.label = static_cast<std::uint16_t>(source.labels[i]);
      rec.qst_id = static_cast<std::uint16_t>(k);
      rec.image.width = img.width;
      rec.image.height = img.height;
      rec.image.pixels = codec::to_interleaved_rgb(codec::compress_simulate(planar, ds.qsts[k]));
    }
  });
  ds.validate();
  return ds;
}

SyntheticSpec desk_spec(std::size_t per_class, std::uint64_t seed) {
  using std::numbers::pi;
  SyntheticSpec spec;
  for (int k = 0; k < 4; ++k) {
    const double angle = k * pi / 4.0;
    spec.classes.push_back(SyntheticClass{{GratingBand{0.30, 0.45, angle - pi / 16.0, angle + pi / 16.0, 0.8, 1.2}}});
  }
  spec.clutter = {GratingBand{0.03, 0.08, 0.0, pi, 0.8, 1.2}};
  spec.amplitude = 12.0;
  spec.noise = 8.0;
  spec.per_class = per_class;
  spec.seed = seed;
  return spec;
}

LabeledImages generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes.empty()) fail(ErrorCode::BadSpec, "no classes");
  if (spec.width == 0 || spec.height == 0 || spec.width > 0xFFFF || spec.height > 0xFFFF) {
    fail(ErrorCode::BadSpec, "image size out of range");
  }
  if (!(spec.amplitude >= 0.0) || !(spec.noise >= 0.0)) fail(ErrorCode::BadSpec, "negative amplitude or noise");
  auto check_band = [](const GratingBand& b) {
    if (!(b.freq_lo > 0.0 && b.freq_lo <= b.freq_hi && b.freq_hi <= 0.5)) {
      fail(ErrorCode::BadSpec, "grating frequency band must satisfy 0 < lo <= hi <= 0.5");
    }
    if (!(b.angle_lo <= b.angle_hi) || !std::isfinite(b.angle_lo) || !std::isfinite(b.angle_hi)) {
      fail(ErrorCode::BadSpec, "bad grating angle band");
    }
    if (!(b.gain_lo >= 0.0 && b.gain_lo <= b.gain_hi) || !std::isfinite(b.gain_hi)) {
      fail(ErrorCode::BadSpec, "bad grating gain range");
    }
  };
  for (const auto& c : spec.classes) {
    for (const auto& b : c.bands) check_band(b);
  }
  for (const auto& b : spec.clutter) check_band(b);

  LabeledImages out;
  out.classes = spec.classes.size();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t W = spec.width, H = spec.height;
  for (std::size_t k = 0; k < spec.classes.size(); ++k) {
    for (std::size_t s = 0; s < spec.per_class; ++s) {
      std::vector<double> field(W * H, 0.0);
      auto draw = [&](const GratingBand& band) {
        const double f = band.freq_lo + (band.freq_hi - band.freq_lo) * unit(rng);
        const double theta = band.angle_lo + (band.angle_hi - band.angle_lo) * unit(rng);
        const double phase = 2.0 * std::numbers::pi * unit(rng);
        const double amp = spec.amplitude * (band.gain_lo + (band.gain_hi - band.gain_lo) * unit(rng));
        const double fx = f * std::cos(theta), fy = f * std::sin(theta);
        for (std::size_t y = 0; y < H; ++y) {
          for (std::size_t x = 0; x < W; ++x) {
            field[y * W + x] += amp * std::cos(2.0 * std::numbers::pi * (fx * x + fy * y) + phase);
          }
        }
      };
      for (const auto& band : spec.classes[k].bands) draw(band);
      for (const auto& band : spec.clutter) draw(band);
      std::array<double, 3> gain{};
      for (auto& g : gain) g = 0.8 + 0.4 * unit(rng);
      const double level = 128.0 + 24.0 * (unit(rng) - 0.5);
      RgbImage img{static_cast<std::uint16_t>(W), static_cast<std::uint16_t>(H), std::vector<std::uint8_t>(W * H * 3)};
      for (std::size_t i = 0; i < W * H; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = level + gain[c] * field[i] + spec.noise * gauss(rng);
          img.pixels[3 * i + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
        }
      }
      out.images.push_back(std::move(img));
      out.labels.push_back(static_cast<int>(k));
    }
  }
  return out;
}

LabeledImages decode_cifar_binary(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecord != 0) {
    fail(ErrorCode::BadRecordSize, std::to_string(bytes.size()) + " bytes is not a multiple of " +
                                       std::to_string(kCifarRecord));
  }
  LabeledImages out;
  const std::size_t plane = kCifarSide * kCifarSide;
  for (std::size_t off = 0; off < bytes.size(); off += kCifarRecord) {
    const int label = bytes[off];
    RgbImage img{kCifarSide, kCifarSide, std::vector<std::uint8_t>(plane * 3)};
    for (std::size_t i = 0; i < plane; ++i) {
      for (std::size_t c = 0; c < 3; ++c) img.pixels[3 * i + c] = bytes[off + 1 + c * plane + i];
    }
    out.images.push_back(std::move(img));
    out.labels.push_back(label);
    out.classes = std::max<std::size_t>(out.classes, static_cast<std::size_t>(label) + 1);
  }
  return out;
}

LabeledImages read_cifar_binary(const std::filesystem::path& path) { return decode_cifar_binary(read_file(path)); }

std::vector<std::uint8_t> encode_cifar_binary(const LabeledImages& images) {
  std::vector<std::uint8_t> out;
  const std::size_t plane = kCifarSide * kCifarSide;
  for (std::size_t n = 0; n < images.images.size(); ++n) {
    const auto& img = images.images[n];
    if (img.width != kCifarSide || img.height != kCifarSide) fail(ErrorCode::ShapeMismatch, "CIFAR images are 32x32");
    if (images.labels[n] < 0 || images.labels[n] > 255) fail(ErrorCode::InvalidArgument, "CIFAR label out of range");
    out.push_back(static_cast<std::uint8_t>(images.labels[n]));
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < plane; ++i) out.push_back(img.pixels[3 * i + c]);
    }
  }
  return out;
}

std::string qst_label(const Qst& q) {
  const auto cls = jpeg::classify_qst(q);
  if (cls.qf) return "Q" + std::to_string(*cls.qf);
  return "Qu:" + to_hex(q).substr(0, 16);
}

std::string qst_report(const Dataset& ds) {
  std::vector<std::size_t> counts(ds.qsts.size(), 0);
  for (const auto& r : ds.records) ++counts.at(r.qst_id);
  std::vector<std::size_t> order(ds.qsts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<int> qf(ds.qsts.size());
  for (std::size_t i = 0; i < qf.size(); ++i) qf[i] = jpeg::classify_qst(ds.qsts[i]).qf.value_or(1000);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    return qf[a] < qf[b];
  });
  std::ostringstream out;
  out << "qst,count,fraction\n";
  const double total = static_cast<double>(ds.records.size());
  for (std::size_t i : order) {
    if (counts[i] == 0) continue;
    out << qst_label(ds.qsts[i]) << ',' << counts[i] << ',' << std::setprecision(17)
        << static_cast<double>(counts[i]) / total << '\n';
  }
  return out.str();
}

LabeledImages load_image_folder(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail(ErrorCode::IoError, dir.string() + " is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  LabeledImages out;
  out.classes = class_dirs.size();
  for (std::size_t k = 0; k < class_dirs.size(); ++k) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[k])) {
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      out.images.push_back(read_png(f));
      out.labels.push_back(static_cast<int>(k));
    }
  }
  if (out.images.empty()) fail(ErrorCode::InvalidArgument, "no PNG images under " + dir.string());
  return out;
}

}  // namespace qsam::data
