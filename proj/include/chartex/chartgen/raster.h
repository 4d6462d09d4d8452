#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace chartex::gen {

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Color&) const = default;
};

// WCAG relative luminance and contrast ratio.
double luminance(Color c);
double contrast_ratio(Color a, Color b);
Color mix(Color a, Color b, double t);

class Image {
 public:
  Image() = default;
  Image(int width, int height, Color fill = {255, 255, 255});

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return width_ == 0 || height_ == 0; }

  Color at(int x, int y) const;
  void set(int x, int y, Color c);
  // Blends c over the pixel with coverage alpha in [0, 1]; out-of-bounds
  // writes are dropped.
  void blend(int x, int y, Color c, double alpha);

  const std::vector<std::uint8_t>& data() const { return data_; }
  std::vector<std::uint8_t>& data() { return data_; }

  bool operator==(const Image&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;  // RGB, row-major
};

void fill_rect(Image& img, int x0, int y0, int x1, int y1, Color c);

// Fills columns [x0, x1) between continuous rows top and bottom; the two
// boundary rows receive fractional coverage.
void fill_rect_aa(Image& img, int x0, int x1, double top, double bottom, Color c);

void draw_rect_outline(Image& img, int x0, int y0, int x1, int y1, Color c);

// Anti-aliased segment of the given width.
void draw_line(Image& img, double x0, double y0, double x1, double y1, double width, Color c);

void fill_disc(Image& img, double cx, double cy, double radius, Color c);

// Fills the sector between angles a0 and a1 (radians, clockwise from 12
// o'clock). Each pixel is assigned by its centre.
void fill_sector(Image& img, double cx, double cy, double radius, double a0, double a1, Color c);

// Stacks `top`, then `bottom` below it; widths are padded with `fill`.
Image stack_vertical(const Image& top, const Image& bottom, Color fill);

// Copies src into dst with its top-left corner at (x, y), clipped.
void blit(Image& dst, const Image& src, int x, int y);

std::vector<std::uint8_t> encode_png(const Image& img);
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);
Image decode_png(const std::vector<std::uint8_t>& bytes);

}  // namespace chartex::gen
