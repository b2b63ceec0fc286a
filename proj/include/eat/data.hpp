#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "eat/random.hpp"
#include "eat/tensor.hpp"

namespace eat {

enum class Split { train, test, validation };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::validation: return "validation";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s == "validation") return Split::validation;
  throw ConfigError("unknown split '" + s + "'");
}

// Labeled image set: images [S,C,H,W] with values in [0,1].
template <class S>
struct Dataset {
  BasicTensor<S> images;
  std::vector<int> labels;
  int num_classes = 0;
  Split split = Split::train;

  size_t size() const { return labels.size(); }
  size_t sample_numel() const {
    return labels.empty() ? 0 : images.numel() / labels.size();
  }
  Shape sample_shape() const {
    Shape s(images.shape().begin() + 1, images.shape().end());
    return s;
  }
};

// Gathers samples at `idx` into a batch tensor plus labels.
template <class S>
std::pair<BasicTensor<S>, std::vector<int>> make_batch(
    const Dataset<S>& ds, std::span<const size_t> idx) {
  const size_t n = ds.sample_numel();
  Shape shape = ds.images.shape();
  shape[0] = idx.size();
  BasicTensor<S> batch(shape);
  std::vector<int> labels(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    const S* src = ds.images.data() + idx[i] * n;
    std::copy(src, src + n, batch.data() + i * n);
    labels[i] = ds.labels[idx[i]];
  }
  return {std::move(batch), std::move(labels)};
}

template <class S>
Dataset<S> subset(const Dataset<S>& ds, const std::vector<size_t>& idx,
                  Split split) {
  auto [images, labels] = make_batch(ds, idx);
  return Dataset<S>{std::move(images), std::move(labels), ds.num_classes, split};
}

// ---------------------------------------------------------------------------
// Synthetic data: each class has a fixed binary template laid out on a 4x4
// cell grid; samples are the template plus clamped Gaussian pixel noise.
// Templates depend only on (seed, class), noise on (seed, split, sample), so
// splits of the same seed share templates but never share noise.
// ---------------------------------------------------------------------------

inline constexpr int kSyntheticGrid = 4;

template <class S>
std::vector<BasicTensor<S>> synthetic_templates(int num_classes, int image_size,
                                                int channels, uint64_t seed) {
  if (num_classes < 1 || num_classes > 1000) {
    throw ConfigError("gen_synthetic: num_classes must be in [1, 1000]");
  }
  if (image_size < 8) throw ConfigError("gen_synthetic: image_size must be >= 8");
  if (channels < 1) throw ConfigError("gen_synthetic: channels must be >= 1");
  const int g = kSyntheticGrid;
  std::vector<uint32_t> patterns;
  std::vector<BasicTensor<S>> templates;
  for (int c = 0; c < num_classes; ++c) {
    Rng rng = Rng::derive(seed, 0x7e3a0000u + static_cast<uint64_t>(c));
    uint32_t pattern = 0;
    for (int attempt = 0;; ++attempt) {
      pattern = 0;
      for (int cell = 0; cell < g * g; ++cell) {
        if (rng.uniform() < 0.5) pattern |= 1u << cell;
      }
      const bool taken =
          std::find(patterns.begin(), patterns.end(), pattern) != patterns.end();
      if (pattern != 0 && !taken) break;
      if (attempt > 10000) {
        throw ConfigError("gen_synthetic: could not draw distinct class patterns");
      }
    }
    patterns.push_back(pattern);
    BasicTensor<S> tmpl(Shape{static_cast<size_t>(channels),
                              static_cast<size_t>(image_size),
                              static_cast<size_t>(image_size)});
    for (int ch = 0; ch < channels; ++ch) {
      for (int y = 0; y < image_size; ++y) {
        for (int x = 0; x < image_size; ++x) {
          const int gy = y * g / image_size;
          const int gx = x * g / image_size;
          const bool on = (pattern >> (gy * g + gx)) & 1u;
          tmpl(ch, y, x) = on ? S(1) : S(0);
        }
      }
    }
    templates.push_back(std::move(tmpl));
  }
  return templates;
}

template <class S>
Dataset<S> gen_synthetic_counts(const std::vector<int>& samples_per_class,
                                int image_size, double noise_std, uint64_t seed,
                                Split split = Split::train, int channels = 1) {
  if (noise_std < 0.0) throw ConfigError("gen_synthetic: noise_std must be >= 0");
  const int num_classes = static_cast<int>(samples_per_class.size());
  const auto templates =
      synthetic_templates<S>(num_classes, image_size, channels, seed);
  size_t total = 0;
  for (int n : samples_per_class) {
    if (n < 0) throw ConfigError("gen_synthetic: negative sample count");
    total += static_cast<size_t>(n);
  }
  if (total == 0) throw ConfigError("gen_synthetic: empty dataset");
  Dataset<S> ds;
  ds.num_classes = num_classes;
  ds.split = split;
  ds.images = BasicTensor<S>(Shape{total, static_cast<size_t>(channels),
                                   static_cast<size_t>(image_size),
                                   static_cast<size_t>(image_size)});
  ds.labels.resize(total);
  Rng noise = Rng::derive(seed, 0x4015e000u + static_cast<uint64_t>(split));
  const size_t n = templates[0].numel();
  size_t s = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (int k = 0; k < samples_per_class[c]; ++k, ++s) {
      S* dst = ds.images.data() + s * n;
      const S* src = templates[c].data();
      if (noise_std == 0.0) {
        std::copy(src, src + n, dst);
      } else {
        for (size_t i = 0; i < n; ++i) {
          const double v =
              static_cast<double>(src[i]) + noise.normal(0.0, noise_std);
          dst[i] = static_cast<S>(std::clamp(v, 0.0, 1.0));
        }
      }
      ds.labels[s] = c;
    }
  }
  return ds;
}

template <class S>
Dataset<S> gen_synthetic(int num_classes, int samples_per_class, int image_size,
                         double noise_std, uint64_t seed,
                         Split split = Split::train, int channels = 1) {
  return gen_synthetic_counts<S>(
      std::vector<int>(static_cast<size_t>(num_classes), samples_per_class),
      image_size, noise_std, seed, split, channels);
}

// ---------------------------------------------------------------------------
// Binary record IO. A record is 1 label byte followed by channels*h*w pixel
// bytes, channel-major then row-major; pixels scale to [0,1] as byte/255.
// CIFAR-10 is this layout with 3x32x32 (3073-byte records), 10 classes.
// ---------------------------------------------------------------------------

template <class S>
Dataset<S> load_records(const std::vector<std::string>& paths, int channels,
                        int height, int width, int num_classes, Split split,
                        size_t max_per_file = 0) {
  if (paths.empty()) throw ConfigError("dataset: empty file list");
  const size_t pixels = static_cast<size_t>(channels) *
                        static_cast<size_t>(height) *
                        static_cast<size_t>(width);
  const size_t record = 1 + pixels;
  std::vector<unsigned char> raw;
  std::vector<size_t> counts;
  for (const std::string& path : paths) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open dataset file '" + path + "'");
    f.seekg(0, std::ios::end);
    const auto bytes = static_cast<size_t>(f.tellg());
    f.seekg(0, std::ios::beg);
    if (bytes % record != 0) {
      throw IoError("truncated dataset file '" + path + "': " +
                    std::to_string(bytes) + " bytes, record cut at byte offset " +
                    std::to_string(bytes - bytes % record));
    }
    size_t n = bytes / record;
    if (max_per_file > 0) n = std::min(n, max_per_file);
    const size_t off = raw.size();
    raw.resize(off + n * record);
    f.read(reinterpret_cast<char*>(raw.data() + off),
           static_cast<std::streamsize>(n * record));
    if (!f) throw IoError("short read from dataset file '" + path + "'");
    counts.push_back(n);
  }
  const size_t total = raw.size() / record;
  if (total == 0) throw IoError("dataset files contain no records");
  Dataset<S> ds;
  ds.num_classes = num_classes;
  ds.split = split;
  ds.images = BasicTensor<S>(Shape{total, static_cast<size_t>(channels),
                                   static_cast<size_t>(height),
                                   static_cast<size_t>(width)});
  ds.labels.resize(total);
  for (size_t s = 0; s < total; ++s) {
    const unsigned char* rec = raw.data() + s * record;
    if (static_cast<int>(rec[0]) >= num_classes) {
      throw IoError("dataset record " + std::to_string(s) + ": label " +
                    std::to_string(rec[0]) + " > " +
                    std::to_string(num_classes - 1));
    }
    ds.labels[s] = rec[0];
    S* dst = ds.images.data() + s * pixels;
    for (size_t i = 0; i < pixels; ++i) {
      dst[i] = static_cast<S>(rec[1 + i] / 255.0);
    }
  }
  return ds;
}

template <class S>
Dataset<S> load_cifar10_binary(const std::vector<std::string>& paths,
                               Split split, size_t max_per_file = 0) {
  return load_records<S>(paths, 3, 32, 32, 10, split, max_per_file);
}

// Writes the binary record layout back out; pixel bytes are round(v*255).
template <class S>
void save_records(const Dataset<S>& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write dataset file '" + path + "'");
  const size_t pixels = ds.sample_numel();
  std::vector<unsigned char> rec(1 + pixels);
  for (size_t s = 0; s < ds.size(); ++s) {
    rec[0] = static_cast<unsigned char>(ds.labels[s]);
    const S* src = ds.images.data() + s * pixels;
    for (size_t i = 0; i < pixels; ++i) {
      const double v = std::clamp(static_cast<double>(src[i]), 0.0, 1.0);
      rec[1 + i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    f.write(reinterpret_cast<const char*>(rec.data()),
            static_cast<std::streamsize>(rec.size()));
  }
  if (!f) throw IoError("short write to dataset file '" + path + "'");
}

// ---------------------------------------------------------------------------
// Augmentation: zero-pad + random crop, then random rotation with bilinear
// sampling and zero fill. Deterministic in the passed rng. Degenerate
// parameters (0 padding, 0 rotation) are exact identities and draw nothing.
// ---------------------------------------------------------------------------

template <class S>
BasicTensor<S> augment(const BasicTensor<S>& image, Rng& rng, int crop_padding,
                       double max_rotation_degrees) {
  if (image.rank() != 3) {
    throw ShapeError("augment expects [channels, h, w], got " +
                     shape_to_string(image.shape()));
  }
  if (crop_padding < 0) throw ConfigError("augment: crop_padding must be >= 0");
  if (max_rotation_degrees < 0.0 || max_rotation_degrees > 180.0) {
    throw ConfigError("augment: max_rotation_degrees must be in [0, 180]");
  }
  const size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  BasicTensor<S> cur = image;
  if (crop_padding > 0) {
    const long dy = rng.uniform_int(0, 2 * crop_padding);
    const long dx = rng.uniform_int(0, 2 * crop_padding);
    BasicTensor<S> cropped(image.shape());
    for (size_t c = 0; c < ch; ++c) {
      for (size_t y = 0; y < h; ++y) {
        const long sy = static_cast<long>(y) + dy - crop_padding;
        for (size_t x = 0; x < w; ++x) {
          const long sx = static_cast<long>(x) + dx - crop_padding;
          S v = S(0);
          if (sy >= 0 && sy < static_cast<long>(h) && sx >= 0 &&
              sx < static_cast<long>(w)) {
            v = cur(c, static_cast<size_t>(sy), static_cast<size_t>(sx));
          }
          cropped(c, y, x) = v;
        }
      }
    }
    cur = std::move(cropped);
  }
  if (max_rotation_degrees > 0.0) {
    const double deg = rng.uniform(-max_rotation_degrees, max_rotation_degrees);
    const double rad = deg * 3.14159265358979323846 / 180.0;
    const double ct = std::cos(rad), st = std::sin(rad);
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    BasicTensor<S> rotated(image.shape());
    for (size_t c = 0; c < ch; ++c) {
      for (size_t y = 0; y < h; ++y) {
        for (size_t x = 0; x < w; ++x) {
          // inverse-rotate the output coordinate into the source image
          const double oy = static_cast<double>(y) - cy;
          const double ox = static_cast<double>(x) - cx;
          const double sy = ct * oy + st * ox + cy;
          const double sx = -st * oy + ct * ox + cx;
          const long y0 = static_cast<long>(std::floor(sy));
          const long x0 = static_cast<long>(std::floor(sx));
          const double fy = sy - static_cast<double>(y0);
          const double fx = sx - static_cast<double>(x0);
          double v = 0.0;
          for (int ry = 0; ry <= 1; ++ry) {
            for (int rx = 0; rx <= 1; ++rx) {
              const long yy = y0 + ry, xx = x0 + rx;
              if (yy < 0 || yy >= static_cast<long>(h) || xx < 0 ||
                  xx >= static_cast<long>(w)) {
                continue;  // zero fill
              }
              const double wgt = (ry ? fy : 1.0 - fy) * (rx ? fx : 1.0 - fx);
              v += wgt * static_cast<double>(
                             cur(c, static_cast<size_t>(yy),
                                 static_cast<size_t>(xx)));
            }
          }
          rotated(c, y, x) = static_cast<S>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
    cur = std::move(rotated);
  }
  for (size_t i = 0; i < cur.numel(); ++i) {
    cur[i] = static_cast<S>(
        std::clamp(static_cast<double>(cur[i]), 0.0, 1.0));
  }
  return cur;
}

}  // namespace eat
