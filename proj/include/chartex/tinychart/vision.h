#pragma once

#include <cstdint>
#include <vector>

#include "chartex/chartgen/raster.h"
#include "chartex/tinychart/config.h"

namespace chartex::tiny {

// Square 8-bit RGB image, row-major, channels interleaved.
struct PixelImage {
  int size = 0;
  std::vector<std::uint8_t> rgb;
};

// Separable triangle-filter resize; the filter widens when downscaling so
// thin strokes are averaged rather than skipped.
PixelImage resize_bilinear(const gen::Image& img, int size);

// Non-overlapping patches flattened in (row, column, channel) order and
// scaled to [0, 1]. Result is n_image_tokens × patch_dim, row-major.
std::vector<float> patchify(const PixelImage& img, int patch_size);

// resize + patchify for a model config.
std::vector<float> prepare_image(const gen::Image& img, const ModelConfig& cfg);

}  // namespace chartex::tiny
