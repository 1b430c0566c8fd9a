#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mtvit/rng.hpp"
#include "mtvit/serialize.hpp"
#include "mtvit/tensor.hpp"

namespace mtvit {

// Binary dataset pair: images "MTDS" (version, count, h, w, c, then raw
// u8 pixels) and labels "MTLB" (version, count, then one byte per label).

constexpr uint32_t kDatasetVersion = 1;

struct Dataset {
  size_t count = 0, h = 0, w = 0, c = 0;
  std::vector<uint8_t> pixels;  // count * h * w * c
  std::vector<uint8_t> labels;  // count

  // Image i as [h x w x c] floats in [0,1].
  template <typename T>
  Tensor<T> image(size_t i) const {
    Tensor<T> img({h, w, c});
    const uint8_t* src = pixels.data() + i * h * w * c;
    for (size_t j = 0; j < h * w * c; ++j)
      img[j] = static_cast<T>(src[j]) / T(255);
    return img;
  }

  int label(size_t i) const { return labels[i]; }
};

inline void save_dataset(const Dataset& ds, const std::string& images_path,
                         const std::string& labels_path) {
  {
    auto os = open_output(images_path);
    os.write("MTDS", 4);
    write_u32(os, kDatasetVersion);
    write_u32(os, static_cast<uint32_t>(ds.count));
    write_u32(os, static_cast<uint32_t>(ds.h));
    write_u32(os, static_cast<uint32_t>(ds.w));
    write_u32(os, static_cast<uint32_t>(ds.c));
    os.write(reinterpret_cast<const char*>(ds.pixels.data()),
             static_cast<std::streamsize>(ds.pixels.size()));
    if (!os) throw std::runtime_error("write failed: " + images_path);
  }
  {
    auto os = open_output(labels_path);
    os.write("MTLB", 4);
    write_u32(os, kDatasetVersion);
    write_u32(os, static_cast<uint32_t>(ds.count));
    os.write(reinterpret_cast<const char*>(ds.labels.data()),
             static_cast<std::streamsize>(ds.labels.size()));
    if (!os) throw std::runtime_error("write failed: " + labels_path);
  }
}

inline Dataset load_dataset(const std::string& images_path,
                            const std::string& labels_path) {
  Dataset ds;
  {
    auto is = open_input(images_path);
    expect_magic(is, "MTDS", images_path);
    if (read_u32(is) != kDatasetVersion)
      throw std::runtime_error("unsupported dataset version in " + images_path);
    ds.count = read_u32(is);
    ds.h = read_u32(is);
    ds.w = read_u32(is);
    ds.c = read_u32(is);
    ds.pixels.resize(ds.count * ds.h * ds.w * ds.c);
    is.read(reinterpret_cast<char*>(ds.pixels.data()),
            static_cast<std::streamsize>(ds.pixels.size()));
    if (!is) throw std::runtime_error("truncated dataset: " + images_path);
  }
  {
    auto is = open_input(labels_path);
    expect_magic(is, "MTLB", labels_path);
    if (read_u32(is) != kDatasetVersion)
      throw std::runtime_error("unsupported dataset version in " + labels_path);
    const uint32_t n = read_u32(is);
    if (n != ds.count)
      throw std::runtime_error("label count mismatch between " + images_path +
                               " and " + labels_path);
    ds.labels.resize(n);
    is.read(reinterpret_cast<char*>(ds.labels.data()),
            static_cast<std::streamsize>(ds.labels.size()));
    if (!is) throw std::runtime_error("truncated labels: " + labels_path);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic shape dataset
// ---------------------------------------------------------------------------

// 32x32x3 images of ten shape classes. Each sample is a pure function of
// (seed, index): label cycles through the classes, difficulty in [0,1] drives
// size, contrast, blur and noise. Easy samples are large clean shapes; hard
// ones are small, dim, blurred and noisy. Difficulty never leaves the
// generator; the predictor has to rediscover it from pixels.
struct SynthSample {
  std::vector<uint8_t> pixels;  // h*w*3
  int label = 0;
  double difficulty = 0;
};

namespace detail {

inline uint64_t mix_seed(uint64_t seed, uint64_t index) {
  uint64_t z = seed ^ (0x9e3779b97f4a7c15ull * (index + 0x243f6a8885a308d3ull));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline void box_blur(std::vector<double>& img, size_t h, size_t w) {
  std::vector<double> out(img.size());
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x)
      for (size_t ch = 0; ch < 3; ++ch) {
        double acc = 0;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = static_cast<int>(y) + dy;
            const int xx = static_cast<int>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<int>(h) ||
                xx >= static_cast<int>(w))
              continue;
            acc += img[(yy * w + xx) * 3 + ch];
            ++cnt;
          }
        out[(y * w + x) * 3 + ch] = acc / cnt;
      }
  img = std::move(out);
}

}  // namespace detail

inline SynthSample synth_sample(uint64_t seed, uint64_t index, size_t h = 32,
                                size_t w = 32) {
  Rng rng(detail::mix_seed(seed, index));
  SynthSample s;
  s.label = static_cast<int>(index % 10);
  s.difficulty = rng.uniform();
  const double t = s.difficulty;

  const double bg = 0.06 + 0.06 * rng.uniform();
  const double fg = 0.95 - 0.45 * t;
  const double radius = 12.0 - 7.0 * t;
  const double jitter = 1.0 + 4.0 * t;
  const double cx = w / 2.0 + jitter * rng.uniform(-1.0, 1.0);
  const double cy = h / 2.0 + jitter * rng.uniform(-1.0, 1.0);
  const double noise_amp = 0.18 * t;
  // Slight per-channel tint so color is a distractor, never the class signal.
  double tint[3];
  for (double& v : tint) v = 0.75 + 0.25 * rng.uniform();

  const double thick = std::max(1.5, radius / 3.0);
  const double period = std::max(3.0, radius / 2.0);

  auto inside = [&](double x, double y) -> bool {
    const double dx = x - cx, dy = y - cy;
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (s.label) {
      case 0:  // filled disk
        return dx * dx + dy * dy <= radius * radius;
      case 1:  // square frame
        return std::max(ax, ay) <= radius && std::max(ax, ay) >= radius - thick;
      case 2:  // filled triangle, apex up
        return dy >= -radius && dy <= radius && ax <= (dy + radius) * 0.5;
      case 3:  // plus
        return (ax <= thick && ay <= radius) || (ay <= thick && ax <= radius);
      case 4:  // diagonal cross
        return std::max(ax, ay) <= radius &&
               (std::abs(dx - dy) <= thick || std::abs(dx + dy) <= thick);
      case 5:  // horizontal stripes
        return std::max(ax, ay) <= radius &&
               std::fmod(dy + radius, 2.0 * period) < period;
      case 6:  // vertical stripes
        return std::max(ax, ay) <= radius &&
               std::fmod(dx + radius, 2.0 * period) < period;
      case 7:  // checkerboard
        return std::max(ax, ay) <= radius &&
               (static_cast<int>(std::floor((dx + radius) / period)) +
                static_cast<int>(std::floor((dy + radius) / period))) %
                       2 ==
                   0;
      case 8:  // ring
        return dx * dx + dy * dy <= radius * radius &&
               dx * dx + dy * dy >= 0.45 * 0.45 * radius * radius;
      default:  // diamond
        return ax + ay <= radius;
    }
  };

  std::vector<double> img(h * w * 3);
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      const double v = inside(static_cast<double>(x), static_cast<double>(y)) ? fg : bg;
      for (size_t ch = 0; ch < 3; ++ch) img[(y * w + x) * 3 + ch] = v * tint[ch];
    }

  if (t > 0.45) detail::box_blur(img, h, w);
  if (t > 0.8) detail::box_blur(img, h, w);

  s.pixels.resize(img.size());
  for (size_t i = 0; i < img.size(); ++i) {
    double v = img[i] + noise_amp * rng.uniform(-1.0, 1.0);
    v = std::min(std::max(v, 0.0), 1.0);
    s.pixels[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return s;
}

// Materializes samples [first, first+count) of the (seed, index) stream.
inline Dataset make_synth_dataset(uint64_t seed, uint64_t first, size_t count,
                                  size_t h = 32, size_t w = 32) {
  Dataset ds;
  ds.count = count;
  ds.h = h;
  ds.w = w;
  ds.c = 3;
  ds.pixels.reserve(count * h * w * 3);
  ds.labels.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    SynthSample s = synth_sample(seed, first + i, h, w);
    ds.pixels.insert(ds.pixels.end(), s.pixels.begin(), s.pixels.end());
    ds.labels.push_back(static_cast<uint8_t>(s.label));
  }
  return ds;
}

// Writes train and validation splits (val is a quarter of the train count,
// drawn from disjoint indices of the same stream).
inline void gen_data(uint64_t seed, size_t count, const std::string& out_dir) {
  const Dataset train = make_synth_dataset(seed, 0, count);
  const Dataset val = make_synth_dataset(seed, count, std::max<size_t>(count / 4, 1));
  save_dataset(train, out_dir + "/train_images.mtds", out_dir + "/train_labels.mtlb");
  save_dataset(val, out_dir + "/val_images.mtds", out_dir + "/val_labels.mtlb");
}

}  // namespace mtvit
