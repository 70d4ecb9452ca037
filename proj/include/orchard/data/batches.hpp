#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "orchard/data/image.hpp"
#include "orchard/data/labels.hpp"
#include "orchard/errors.hpp"
#include "orchard/rng.hpp"
#include "orchard/tensor.hpp"

namespace orchard::data {

struct AugmentConfig {
  double hflip_prob = 0.5;
  double vflip_prob = 0.0;
  double rotate_deg = 10.0;        // rotation drawn uniformly in [-deg, +deg]
  double brightness_delta = 0.1;   // additive, clamped back to [0,1]
};

struct BatchSpec {
  std::size_t batch_size = 16;
  bool shuffle = true;
  bool train = true;  // augmentation applies to training batches only
  AugmentConfig augment;
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> stddev{0.229f, 0.224f, 0.225f};
  std::size_t resolution = 224;
};

namespace detail {

inline void flip_horizontal(std::vector<float>& p, std::size_t h, std::size_t w) {
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y) {
      float* row = p.data() + (c * h + y) * w;
      for (std::size_t x = 0; x < w / 2; ++x) std::swap(row[x], row[w - 1 - x]);
    }
}

inline void flip_vertical(std::vector<float>& p, std::size_t h, std::size_t w) {
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h / 2; ++y) {
      float* a = p.data() + (c * h + y) * w;
      float* b = p.data() + (c * h + (h - 1 - y)) * w;
      for (std::size_t x = 0; x < w; ++x) std::swap(a[x], b[x]);
    }
}

// Bilinear rotation about the image center; samples falling outside keep 0.
inline std::vector<float> rotate(const std::vector<float>& p, std::size_t h, std::size_t w,
                                 double degrees) {
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  std::vector<float> out(p.size(), 0.f);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      // Inverse map into the source.
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const double srcx = cx + cs * dx + sn * dy;
      const double srcy = cy - sn * dx + cs * dy;
      if (srcx < 0 || srcy < 0 || srcx > static_cast<double>(w - 1) ||
          srcy > static_cast<double>(h - 1)) {
        continue;
      }
      const std::size_t x0 = static_cast<std::size_t>(srcx);
      const std::size_t y0 = static_cast<std::size_t>(srcy);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double fx = srcx - static_cast<double>(x0);
      const double fy = srcy - static_cast<double>(y0);
      for (std::size_t c = 0; c < 3; ++c) {
        const float* plane = p.data() + c * h * w;
        const double top = (1 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1];
        const double bot = (1 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1];
        out[(c * h + y) * w + x] = static_cast<float>((1 - fy) * top + fy * bot);
      }
    }
  return out;
}

}  // namespace detail

// Training-time augmentation: horizontal/vertical flips, small rotation,
// additive brightness jitter. Identity configuration (zero probabilities and
// ranges) returns the input bit-for-bit; a fixed rng state fixes the output.
inline Tensor augment(const Tensor& img, const AugmentConfig& cfg, Rng& rng) {
  if (img.rank() != 3 || img.shape()[0] != 3) {
    throw shape_error("augment: expected [3,H,W], got " + shape_to_string(img.shape()));
  }
  const std::size_t h = img.shape()[1], w = img.shape()[2];
  std::vector<float> p(img.data().begin(), img.data().end());

  if (cfg.hflip_prob > 0.0 && rng.next_double() < cfg.hflip_prob) detail::flip_horizontal(p, h, w);
  if (cfg.vflip_prob > 0.0 && rng.next_double() < cfg.vflip_prob) detail::flip_vertical(p, h, w);
  if (cfg.rotate_deg != 0.0) {
    const double angle = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg);
    p = detail::rotate(p, h, w, angle);
  }
  if (cfg.brightness_delta != 0.0) {
    const float delta = static_cast<float>(rng.uniform(-cfg.brightness_delta, cfg.brightness_delta));
    for (float& v : p) v = std::min(1.0f, std::max(0.0f, v + delta));
  }
  return Tensor::from_data(img.shape(), std::move(p));
}

// Per-channel (x - mean) / std.
inline Tensor normalize(const Tensor& img, const std::array<float, 3>& mean,
                        const std::array<float, 3>& stddev) {
  if (img.rank() != 3 || img.shape()[0] != 3) {
    throw shape_error("normalize: expected [3,H,W], got " + shape_to_string(img.shape()));
  }
  for (float s : stddev) {
    if (!(s > 0.f)) throw contract_error("normalize: std components must be positive");
  }
  const std::size_t plane = img.shape()[1] * img.shape()[2];
  std::vector<float> out(img.data().begin(), img.data().end());
  for (std::size_t c = 0; c < 3; ++c) {
    float* d = out.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) d[i] = (d[i] - mean[c]) / stddev[c];
  }
  return Tensor::from_data(img.shape(), std::move(out));
}

struct Batch {
  Tensor images;                        // [N,3,R,R]
  std::vector<std::size_t> labels;      // class ids
  std::vector<std::string> image_ids;
};

// One epoch over one manifest side: every id exactly once, optional seeded
// shuffle, short final batch kept. Decoding/augmenting happens lazily per
// batch so the stream can run ahead of the consumer.
class BatchStream {
 public:
  BatchStream(const std::vector<SampleRecord>& records, const std::vector<std::string>& ids,
              const BatchSpec& spec, Rng rng)
      : spec_(spec), rng_(rng), ids_(ids) {
    if (spec.batch_size == 0) throw contract_error("batches: batch size must be positive");
    for (const SampleRecord& r : records) by_id_.emplace(r.image_id, &r);
    for (const std::string& id : ids_) {
      if (!by_id_.count(id)) throw data_error("batches: manifest id '" + id + "' not in records");
    }
    if (spec_.shuffle) rng_.shuffle(ids_);
  }

  std::optional<Batch> next() {
    if (cursor_ >= ids_.size()) return std::nullopt;
    const std::size_t n = std::min(spec_.batch_size, ids_.size() - cursor_);
    Batch batch;
    std::vector<float> stacked;
    stacked.reserve(n * 3 * spec_.resolution * spec_.resolution);
    for (std::size_t i = 0; i < n; ++i, ++cursor_) {
      const SampleRecord& rec = *by_id_.at(ids_[cursor_]);
      Tensor img = load_image(rec.image_path, spec_.resolution);
      if (spec_.train) img = augment(img, spec_.augment, rng_);
      img = normalize(img, spec_.mean, spec_.stddev);
      stacked.insert(stacked.end(), img.data().begin(), img.data().end());
      batch.labels.push_back(rec.class_id);
      batch.image_ids.push_back(rec.image_id);
    }
    batch.images =
        Tensor::from_data({n, 3, spec_.resolution, spec_.resolution}, std::move(stacked));
    return batch;
  }

  std::size_t sample_count() const { return ids_.size(); }

 private:
  BatchSpec spec_;
  Rng rng_;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, const SampleRecord*> by_id_;
  std::size_t cursor_ = 0;
};

}  // namespace orchard::data
