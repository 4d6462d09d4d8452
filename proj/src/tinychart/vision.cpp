#include "chartex/tinychart/vision.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace chartex::tiny {
namespace {

struct Taps {
  std::vector<int> first;
  std::vector<int> count;
  std::vector<double> weights;  // count.size() × width
  int width = 0;
};

Taps make_taps(int in, int out) {
  const double scale = static_cast<double>(in) / out;
  const double support = std::max(1.0, scale);
  Taps t;
  t.width = static_cast<int>(std::ceil(support)) * 2 + 1;
  t.first.resize(out);
  t.count.resize(out);
  t.weights.assign(static_cast<std::size_t>(out) * t.width, 0.0);
  for (int o = 0; o < out; ++o) {
    const double centre = (o + 0.5) * scale;
    const int lo = std::max(0, static_cast<int>(std::floor(centre - support)));
    const int hi = std::min(in, static_cast<int>(std::ceil(centre + support)));
    double total = 0.0;
    int n = 0;
    for (int i = lo; i < hi && n < t.width; ++i, ++n) {
      const double w = std::max(0.0, 1.0 - std::abs((i + 0.5 - centre) / support));
      t.weights[static_cast<std::size_t>(o) * t.width + n] = w;
      total += w;
    }
    if (total <= 0.0) {
      const int nearest = std::clamp(static_cast<int>(centre), 0, in - 1);
      t.first[o] = nearest;
      t.count[o] = 1;
      t.weights[static_cast<std::size_t>(o) * t.width] = 1.0;
      continue;
    }
    for (int k = 0; k < n; ++k) t.weights[static_cast<std::size_t>(o) * t.width + k] /= total;
    t.first[o] = lo;
    t.count[o] = n;
  }
  return t;
}

}  // namespace

PixelImage resize_bilinear(const gen::Image& img, int size) {
  if (img.empty() || size <= 0) throw std::invalid_argument("resize of an empty image");
  const int w = img.width();
  const int h = img.height();
  const Taps tx = make_taps(w, size);
  const Taps ty = make_taps(h, size);
  const auto& src = img.data();

  // Horizontal pass: h × size × 3.
  std::vector<double> mid(static_cast<std::size_t>(h) * size * 3, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int o = 0; o < size; ++o) {
      double acc[3] = {0, 0, 0};
      for (int k = 0; k < tx.count[o]; ++k) {
        const double wk = tx.weights[static_cast<std::size_t>(o) * tx.width + k];
        const std::size_t p = (static_cast<std::size_t>(y) * w + tx.first[o] + k) * 3;
        for (int c = 0; c < 3; ++c) acc[c] += wk * src[p + c];
      }
      for (int c = 0; c < 3; ++c) mid[(static_cast<std::size_t>(y) * size + o) * 3 + c] = acc[c];
    }
  }

  PixelImage out;
  out.size = size;
  out.rgb.assign(static_cast<std::size_t>(size) * size * 3, 0);
  for (int o = 0; o < size; ++o) {
    for (int x = 0; x < size; ++x) {
      double acc[3] = {0, 0, 0};
      for (int k = 0; k < ty.count[o]; ++k) {
        const double wk = ty.weights[static_cast<std::size_t>(o) * ty.width + k];
        const std::size_t p = (static_cast<std::size_t>(ty.first[o] + k) * size + x) * 3;
        for (int c = 0; c < 3; ++c) acc[c] += wk * mid[p + c];
      }
      for (int c = 0; c < 3; ++c) {
        out.rgb[(static_cast<std::size_t>(o) * size + x) * 3 + c] =
            static_cast<std::uint8_t>(std::clamp(std::lround(acc[c]), 0L, 255L));
      }
    }
  }
  return out;
}

std::vector<float> patchify(const PixelImage& img, int patch_size) {
  if (patch_size <= 0 || img.size % patch_size != 0) {
    throw std::invalid_argument("image size is not a multiple of the patch size");
  }
  const int grid = img.size / patch_size;
  const std::size_t dim = static_cast<std::size_t>(patch_size) * patch_size * 3;
  std::vector<float> out(static_cast<std::size_t>(grid) * grid * dim);
  std::size_t k = 0;
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      for (int py = 0; py < patch_size; ++py) {
        const int y = gy * patch_size + py;
        const std::size_t row = (static_cast<std::size_t>(y) * img.size + gx * patch_size) * 3;
        for (int i = 0; i < patch_size * 3; ++i) out[k++] = static_cast<float>(img.rgb[row + i]) / 255.0f;
      }
    }
  }
  return out;
}

std::vector<float> prepare_image(const gen::Image& img, const ModelConfig& cfg) {
  return patchify(resize_bilinear(img, cfg.image_size), cfg.patch_size);
}

}  // namespace chartex::tiny
