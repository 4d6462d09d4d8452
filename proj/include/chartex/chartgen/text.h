#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "chartex/chartgen/raster.h"

namespace chartex::gen {

struct GlyphMetrics {
  std::int16_t advance;
  std::int16_t x_offset;
  std::int16_t y_offset;  // top of the bitmap relative to the baseline
  std::int16_t width;
  std::int16_t height;
  std::int32_t offset;    // into the packed bit array
};

struct BitmapFontData {
  const char* face;
  int size;
  int ascent;
  int descent;
  const GlyphMetrics* glyphs;  // printable ASCII 32..126
  const std::uint8_t* bits;
};

enum class TextRole { title, source, x_axis_label, y_axis_label, x_tick, y_tick, legend, value_label };

const char* to_string(TextRole r);

// Every string the renderer draws, with its pixel extent [x0, x1) x [y0, y1).
struct DrawnText {
  std::string text;
  TextRole role;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

class Font {
 public:
  // Picks the embedded size closest to pixel_size for the face (0..faces-1).
  Font(int face, int pixel_size);

  static int face_count();

  int line_height() const { return data_->ascent + data_->descent; }
  int ascent() const { return data_->ascent; }
  int size() const { return data_->size; }
  int measure(std::string_view text) const;

  // Draws text with its line box starting at (x, y_top). Characters outside
  // printable ASCII render as '?'.
  DrawnText draw(Image& img, int x, int y_top, std::string_view text, Color c, TextRole role) const;

  // Rotated 90 degrees counter-clockwise, reading bottom to top; (x, y_bottom)
  // is the lower-left corner of the rotated line box.
  DrawnText draw_vertical(Image& img, int x, int y_bottom, std::string_view text, Color c,
                          TextRole role) const;

 private:
  const GlyphMetrics& glyph(char ch) const;

  const BitmapFontData* data_;
};

// Greedy word wrap into at most max_lines lines of at most max_width pixels.
// Returns an empty vector when the text does not fit.
std::vector<std::string> wrap_text(const Font& font, std::string_view text, int max_width,
                                   int max_lines);

}  // namespace chartex::gen
