// SPDX-License-Identifier: Apache-2.0
#include "mosa/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "byte_io.hpp"
#include "mosa/errors.hpp"

namespace mosa {

void Dataset::validate() const {
  if (channels == 0 || height == 0 || width == 0) throw DataError("dataset: empty image dims");
  if (num_classes == 0) throw DataError("dataset: zero classes");
  if (pixels.size() != labels.size() * sample_numel()) {
    throw DataError("dataset: " + std::to_string(pixels.size()) + " pixels for " +
                    std::to_string(labels.size()) + " samples");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw DataError("dataset: sample " + std::to_string(i) + " has label " +
                      std::to_string(labels[i]) + " >= num_classes " +
                      std::to_string(num_classes));
    }
  }
}

std::vector<unsigned char> encode_dataset(const Dataset& ds) {
  ds.validate();
  io::Writer w;
  w.bytes("MOSA", 4);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u16(ds.channels);
  w.u16(ds.height);
  w.u16(ds.width);
  w.u16(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    w.u16(ds.labels[i]);
    for (float v : ds.image(i)) w.f32(v);
  }
  return w.take();
}

Dataset decode_dataset(std::span<const unsigned char> bytes) {
  io::Reader r(bytes, "dataset");
  if (bytes.size() < 4) throw LengthError("dataset: file shorter than its magic");
  if (std::memcmp(bytes.data(), "MOSA", 4) != 0) throw FormatError("dataset: bad magic");
  r.skip(4);
  const auto version = r.u32();
  if (version != kDatasetVersion) {
    throw VersionError("dataset: version " + std::to_string(version) + " not supported (reader " +
                       std::to_string(kDatasetVersion) + ")");
  }
  Dataset ds;
  const auto count = r.u32();
  ds.channels = r.u16();
  ds.height = r.u16();
  ds.width = r.u16();
  ds.num_classes = r.u16();
  const std::uint64_t expected =
      kDatasetHeaderBytes + static_cast<std::uint64_t>(count) * (2 + 4 * ds.sample_numel());
  if (bytes.size() != expected) {
    throw LengthError("dataset: length " + std::to_string(bytes.size()) + " != expected " +
                      std::to_string(expected));
  }
  ds.labels.resize(count);
  ds.pixels.resize(count * ds.sample_numel());
  float* px = ds.pixels.data();
  for (std::size_t i = 0; i < count; ++i) {
    ds.labels[i] = r.u16();
    for (std::size_t j = 0; j < ds.sample_numel(); ++j) *px++ = r.f32();
  }
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  io::write_file(path, encode_dataset(ds));
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return decode_dataset(bytes);
}

namespace {

struct Pattern {
  double theta, freq, phase;
  double color[4];
  double blob_x, blob_y, blob_r;
  double blob_color[4];
};

constexpr std::size_t kMaxChannels = 4;

Pattern draw_pattern(Rng& rng, std::size_t cls, std::size_t classes, std::size_t size) {
  Pattern p{};
  p.theta = std::numbers::pi * (static_cast<double>(cls) + rng.uniform(-0.25, 0.25)) /
            static_cast<double>(classes);
  p.freq = rng.uniform(1.0, 3.0) / static_cast<double>(size);
  p.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (auto& c : p.color) c = rng.uniform(-1.0, 1.0);
  p.blob_x = rng.uniform(0.2, 0.8) * static_cast<double>(size);
  p.blob_y = rng.uniform(0.2, 0.8) * static_cast<double>(size);
  p.blob_r = rng.uniform(0.12, 0.25) * static_cast<double>(size);
  for (auto& c : p.blob_color) c = rng.uniform(-1.0, 1.0);
  return p;
}

// Pattern value at pixel (x, y), channel ch.
double render(const Pattern& p, std::size_t ch, double x, double y) {
  const double u = x * std::cos(p.theta) + y * std::sin(p.theta);
  const double grating = std::sin(2.0 * std::numbers::pi * p.freq * u + p.phase);
  const double dx = x - p.blob_x, dy = y - p.blob_y;
  const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * p.blob_r * p.blob_r));
  return 0.6 * p.color[ch % kMaxChannels] * grating + 1.2 * p.blob_color[ch % kMaxChannels] * blob;
}

std::vector<double> prototype(const Pattern& p, std::size_t channels, std::size_t size) {
  std::vector<double> img(channels * size * size);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x)
        img[(c * size + y) * size + x] =
            render(p, c, static_cast<double>(x), static_cast<double>(y));
  // Unit RMS so classes carry equal energy.
  double ss = 0.0;
  for (double v : img) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(img.size()));
  for (double& v : img) v *= inv;
  return img;
}

Dataset sample_split(const std::vector<std::vector<double>>& protos, const SyntheticSpec& spec,
                     std::size_t per_class, Rng rng) {
  const std::size_t s = spec.image_size, C = spec.channels, K = spec.classes;
  const double diff = spec.difficulty;
  const auto max_shift = static_cast<long>(std::lround(diff));
  Dataset ds;
  ds.channels = static_cast<std::uint16_t>(C);
  ds.height = ds.width = static_cast<std::uint16_t>(s);
  ds.num_classes = static_cast<std::uint16_t>(K);
  ds.labels.reserve(per_class * K);
  ds.pixels.reserve(per_class * K * C * s * s);
  for (std::size_t i = 0; i < per_class * K; ++i) {
    const std::size_t cls = i % K;
    const auto& proto = protos[cls];
    long sx = 0, sy = 0;
    double amp = 1.0;
    Pattern distractor{};
    double distractor_amp = 0.0;
    if (diff > 0.0) {
      sx = static_cast<long>(rng.below(static_cast<std::uint64_t>(2 * max_shift + 1))) - max_shift;
      sy = static_cast<long>(rng.below(static_cast<std::uint64_t>(2 * max_shift + 1))) - max_shift;
      amp = 1.0 + 0.3 * diff * rng.uniform(-1.0, 1.0);
      amp = std::max(amp, 0.1);
      distractor = draw_pattern(rng, rng.below(K), K, s);
      distractor_amp = 0.35 * diff;
    }
    const double noise = 0.5 * diff;
    ds.labels.push_back(static_cast<std::uint16_t>(cls));
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
          const auto src_y = static_cast<std::size_t>((static_cast<long>(y) - sy + static_cast<long>(s)) % static_cast<long>(s));
          const auto src_x = static_cast<std::size_t>((static_cast<long>(x) - sx + static_cast<long>(s)) % static_cast<long>(s));
          double v = amp * proto[(c * s + src_y) * s + src_x];
          if (diff > 0.0) {
            v += distractor_amp *
                 render(distractor, c, static_cast<double>(x), static_cast<double>(y));
            v += noise * rng.normal();
          }
          ds.pixels.push_back(static_cast<float>(v));
        }
      }
    }
  }
  return ds;
}

}  // namespace

DatasetPair gen_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ConfigError("gen_synthetic: classes must be >= 2");
  if (spec.classes > 65535) throw ConfigError("gen_synthetic: too many classes");
  if (spec.channels == 0 || spec.channels > 65535 || spec.image_size == 0 ||
      spec.image_size > 65535) {
    throw ConfigError("gen_synthetic: invalid image dimensions");
  }
  if (!(spec.difficulty >= 0.0) || !std::isfinite(spec.difficulty)) {
    throw ConfigError("gen_synthetic: difficulty must be finite and >= 0");
  }
  Rng root(spec.seed);
  Rng pattern_rng = root.split(0);
  std::vector<std::vector<double>> protos;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    protos.push_back(prototype(draw_pattern(pattern_rng, c, spec.classes, spec.image_size),
                               spec.channels, spec.image_size));
  }
  return {sample_split(protos, spec, spec.samples_per_class, root.split(1)),
          sample_split(protos, spec, spec.val_per_class, root.split(2))};
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices, Rng* rng,
                 const AugmentConfig& aug) {
  const std::size_t C = ds.channels, H = ds.height, W = ds.width;
  const std::size_t per = C * H * W;
  std::vector<double> out(indices.size() * per);
  Batch batch;
  batch.labels.reserve(indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t idx = indices[b];
    if (idx >= ds.size()) {
      throw DataError("batch index " + std::to_string(idx) + " out of range for " +
                      std::to_string(ds.size()) + " samples");
    }
    batch.labels.push_back(ds.labels[idx]);
    auto src = ds.image(idx);
    double* dst = out.data() + b * per;
    if (!rng || (!aug.crop && !aug.hflip)) {
      for (std::size_t i = 0; i < per; ++i) dst[i] = src[i];
      continue;
    }
    // Crop window in source pixel coordinates.
    double cw = static_cast<double>(W), ch = static_cast<double>(H), x0 = 0.0, y0 = 0.0;
    if (aug.crop) {
      const double area = rng->uniform(aug.min_scale, 1.0);
      const double log_ratio = rng->uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
      const double ratio = std::exp(log_ratio);
      cw = std::min(static_cast<double>(W), std::sqrt(area * ratio) * static_cast<double>(W));
      ch = std::min(static_cast<double>(H), std::sqrt(area / ratio) * static_cast<double>(H));
      x0 = rng->uniform() * (static_cast<double>(W) - cw);
      y0 = rng->uniform() * (static_cast<double>(H) - ch);
    }
    const bool flip = aug.hflip && rng->uniform() < 0.5;
    for (std::size_t y = 0; y < H; ++y) {
      const double sy = std::clamp(y0 + (static_cast<double>(y) + 0.5) * ch / static_cast<double>(H) - 0.5, 0.0,
                                   static_cast<double>(H - 1));
      const auto iy = static_cast<std::size_t>(sy);
      const std::size_t iy1 = std::min(iy + 1, H - 1);
      const double fy = sy - static_cast<double>(iy);
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t ox = flip ? W - 1 - x : x;
        const double sx = std::clamp(x0 + (static_cast<double>(x) + 0.5) * cw / static_cast<double>(W) - 0.5, 0.0,
                                     static_cast<double>(W - 1));
        const auto ix = static_cast<std::size_t>(sx);
        const std::size_t ix1 = std::min(ix + 1, W - 1);
        const double fx = sx - static_cast<double>(ix);
        for (std::size_t c = 0; c < C; ++c) {
          const float* plane = src.data() + c * H * W;
          const double top = plane[iy * W + ix] * (1.0 - fx) + plane[iy * W + ix1] * fx;
          const double bot = plane[iy1 * W + ix] * (1.0 - fx) + plane[iy1 * W + ix1] * fx;
          dst[(c * H + y) * W + ox] = top * (1.0 - fy) + bot * fy;
        }
      }
    }
  }
  batch.images = Tensor({indices.size(), C, H, W}, std::move(out));
  return batch;
}

}  // namespace mosa
