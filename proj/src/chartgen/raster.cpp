#include "chartex/chartgen/raster.h"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace chartex::gen {

namespace {

double channel_luminance(std::uint8_t v) {
  const double c = v / 255.0;
  return c <= 0.03928 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

std::uint8_t lerp_channel(std::uint8_t a, std::uint8_t b, double t) {
  return static_cast<std::uint8_t>(std::lround(a + (b - a) * t));
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

double luminance(Color c) {
  return 0.2126 * channel_luminance(c.r) + 0.7152 * channel_luminance(c.g) +
         0.0722 * channel_luminance(c.b);
}

double contrast_ratio(Color a, Color b) {
  const double la = luminance(a);
  const double lb = luminance(b);
  return (std::max(la, lb) + 0.05) / (std::min(la, lb) + 0.05);
}

Color mix(Color a, Color b, double t) {
  return {lerp_channel(a.r, b.r, t), lerp_channel(a.g, b.g, t), lerp_channel(a.b, b.b, t)};
}

Image::Image(int width, int height, Color fill)
    : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height * 3) {
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    data_[i] = fill.r;
    data_[i + 1] = fill.g;
    data_[i + 2] = fill.b;
  }
}

Color Image::at(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  return {data_[i], data_[i + 1], data_[i + 2]};
}

void Image::set(int x, int y, Color c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  data_[i] = c.r;
  data_[i + 1] = c.g;
  data_[i + 2] = c.b;
}

void Image::blend(int x, int y, Color c, double alpha) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_ || alpha <= 0.0) return;
  if (alpha >= 1.0) {
    set(x, y, c);
    return;
  }
  set(x, y, mix(at(x, y), c, alpha));
}

void fill_rect(Image& img, int x0, int y0, int x1, int y1, Color c) {
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, img.width());
  y1 = std::min(y1, img.height());
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) img.set(x, y, c);
  }
}

void fill_rect_aa(Image& img, int x0, int x1, double top, double bottom, Color c) {
  if (bottom < top) std::swap(top, bottom);
  const int first = static_cast<int>(std::floor(top));
  const int last = static_cast<int>(std::ceil(bottom)) - 1;
  for (int y = first; y <= last; ++y) {
    const double cover = std::min(bottom, y + 1.0) - std::max(top, static_cast<double>(y));
    if (cover <= 0.0) continue;
    for (int x = x0; x < x1; ++x) img.blend(x, y, c, cover);
  }
}

void draw_rect_outline(Image& img, int x0, int y0, int x1, int y1, Color c) {
  fill_rect(img, x0, y0, x1, y0 + 1, c);
  fill_rect(img, x0, y1 - 1, x1, y1, c);
  fill_rect(img, x0, y0, x0 + 1, y1, c);
  fill_rect(img, x1 - 1, y0, x1, y1, c);
}

void draw_line(Image& img, double x0, double y0, double x1, double y1, double width, Color c) {
  const double half = width / 2.0;
  const int bx0 = static_cast<int>(std::floor(std::min(x0, x1) - half - 1));
  const int bx1 = static_cast<int>(std::ceil(std::max(x0, x1) + half + 1));
  const int by0 = static_cast<int>(std::floor(std::min(y0, y1) - half - 1));
  const int by1 = static_cast<int>(std::ceil(std::max(y0, y1) + half + 1));
  const double dx = x1 - x0;
  const double dy = y1 - y0;
  const double len2 = dx * dx + dy * dy;
  for (int y = by0; y <= by1; ++y) {
    for (int x = bx0; x <= bx1; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      double t = len2 > 0.0 ? ((px - x0) * dx + (py - y0) * dy) / len2 : 0.0;
      t = clamp01(t);
      const double ex = px - (x0 + t * dx);
      const double ey = py - (y0 + t * dy);
      const double dist = std::sqrt(ex * ex + ey * ey);
      img.blend(x, y, c, clamp01(half + 0.5 - dist));
    }
  }
}

void fill_disc(Image& img, double cx, double cy, double radius, Color c) {
  const int bx0 = static_cast<int>(std::floor(cx - radius - 1));
  const int bx1 = static_cast<int>(std::ceil(cx + radius + 1));
  const int by0 = static_cast<int>(std::floor(cy - radius - 1));
  const int by1 = static_cast<int>(std::ceil(cy + radius + 1));
  for (int y = by0; y <= by1; ++y) {
    for (int x = bx0; x <= bx1; ++x) {
      const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
      img.blend(x, y, c, clamp01(radius + 0.5 - d));
    }
  }
}

void fill_sector(Image& img, double cx, double cy, double radius, double a0, double a1, Color c) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  const int bx0 = static_cast<int>(std::floor(cx - radius));
  const int bx1 = static_cast<int>(std::ceil(cx + radius));
  const int by0 = static_cast<int>(std::floor(cy - radius));
  const int by1 = static_cast<int>(std::ceil(cy + radius));
  for (int y = by0; y <= by1; ++y) {
    for (int x = bx0; x <= bx1; ++x) {
      const double px = x + 0.5 - cx;
      const double py = y + 0.5 - cy;
      if (px * px + py * py > radius * radius) continue;
      // clockwise from 12 o'clock
      double a = std::atan2(px, -py);
      if (a < 0.0) a += kTwoPi;
      if (a >= a0 && a < a1) img.set(x, y, c);
    }
  }
}

Image stack_vertical(const Image& top, const Image& bottom, Color fill) {
  Image out(std::max(top.width(), bottom.width()), top.height() + bottom.height(), fill);
  blit(out, top, 0, 0);
  blit(out, bottom, 0, top.height());
  return out;
}

void blit(Image& dst, const Image& src, int x, int y) {
  for (int sy = 0; sy < src.height(); ++sy) {
    for (int sx = 0; sx < src.width(); ++sx) dst.set(x + sx, y + sy, src.at(sx, sy));
  }
}

}  // namespace chartex::gen
