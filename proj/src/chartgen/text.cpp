#include "chartex/chartgen/text.h"

#include <cstdlib>
#include <sstream>
#include <stdexcept>

namespace chartex::gen {

#include "font_data.inc"

namespace {

constexpr int kFirstGlyph = 32;
constexpr int kLastGlyph = 126;
constexpr int kFaces = 3;

bool glyph_bit(const BitmapFontData& font, const GlyphMetrics& g, int gx, int gy) {
  const int stride = (g.width + 7) / 8;
  const std::uint8_t byte = font.bits[g.offset + gy * stride + gx / 8];
  return (byte & (0x80 >> (gx % 8))) != 0;
}

}  // namespace

const char* to_string(TextRole r) {
  switch (r) {
    case TextRole::title: return "title";
    case TextRole::source: return "source";
    case TextRole::x_axis_label: return "x_axis_label";
    case TextRole::y_axis_label: return "y_axis_label";
    case TextRole::x_tick: return "x_tick";
    case TextRole::y_tick: return "y_tick";
    case TextRole::legend: return "legend";
    case TextRole::value_label: return "value_label";
  }
  return "?";
}

int Font::face_count() { return kFaces; }

Font::Font(int face, int pixel_size) {
  if (face < 0 || face >= kFaces) throw std::out_of_range("font face index");
  const BitmapFontData* best = nullptr;
  const std::size_t per_face = std::size(kBitmapFonts) / kFaces;
  for (std::size_t i = face * per_face; i < (face + 1) * per_face; ++i) {
    if (best == nullptr || std::abs(kBitmapFonts[i].size - pixel_size) < std::abs(best->size - pixel_size)) {
      best = &kBitmapFonts[i];
    }
  }
  data_ = best;
}

const GlyphMetrics& Font::glyph(char ch) const {
  int c = static_cast<unsigned char>(ch);
  if (c < kFirstGlyph || c > kLastGlyph) c = '?';
  return data_->glyphs[c - kFirstGlyph];
}

int Font::measure(std::string_view text) const {
  int w = 0;
  for (char ch : text) w += glyph(ch).advance;
  return w;
}

DrawnText Font::draw(Image& img, int x, int y_top, std::string_view text, Color c, TextRole role) const {
  const int baseline = y_top + data_->ascent;
  int pen = x;
  for (char ch : text) {
    const GlyphMetrics& g = glyph(ch);
    for (int gy = 0; gy < g.height; ++gy) {
      for (int gx = 0; gx < g.width; ++gx) {
        if (glyph_bit(*data_, g, gx, gy)) img.set(pen + g.x_offset + gx, baseline + g.y_offset + gy, c);
      }
    }
    pen += g.advance;
  }
  return {std::string(text), role, x, y_top, pen, y_top + line_height()};
}

DrawnText Font::draw_vertical(Image& img, int x, int y_bottom, std::string_view text, Color c,
                              TextRole role) const {
  int pen = 0;
  for (char ch : text) {
    const GlyphMetrics& g = glyph(ch);
    for (int gy = 0; gy < g.height; ++gy) {
      for (int gx = 0; gx < g.width; ++gx) {
        if (!glyph_bit(*data_, g, gx, gy)) continue;
        const int u = pen + g.x_offset + gx;
        const int v = data_->ascent + g.y_offset + gy;
        img.set(x + v, y_bottom - 1 - u, c);
      }
    }
    pen += g.advance;
  }
  return {std::string(text), role, x, y_bottom - pen, x + line_height(), y_bottom};
}

std::vector<std::string> wrap_text(const Font& font, std::string_view text, int max_width, int max_lines) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) words.push_back(w);
  std::vector<std::string> lines;
  std::string current;
  for (const auto& w : words) {
    if (font.measure(w) > max_width) return {};
    const std::string candidate = current.empty() ? w : current + " " + w;
    if (font.measure(candidate) <= max_width) {
      current = candidate;
    } else {
      lines.push_back(current);
      current = w;
    }
  }
  if (!current.empty()) lines.push_back(current);
  if (static_cast<int>(lines.size()) > max_lines) return {};
  return lines;
}

}  // namespace chartex::gen
