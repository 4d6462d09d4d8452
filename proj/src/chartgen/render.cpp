#include "chartex/chartgen/render.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>

#include "chartex/chartgen/rng.h"

namespace chartex::gen {

namespace {

constexpr double kMinSeriesContrast = 1.5;
constexpr double kMinSeriesDistance = 60.0;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Style {
  Color background;
  Color text;
  Color grid;
  std::vector<Color> series;
  int face = 0;
  int title_px = 18;
  int label_px = 12;
  int tick_px = 10;
  int value_px = 10;
  double bar_fill = 0.6;
  bool show_grid = true;
  double line_width = 2.0;
  bool markers = true;
  int margin = 10;
  int title_align = 1;  // 0 left, 1 centre, 2 right
};

Color random_color(Rng& rng) {
  const std::uint64_t v = rng.next();
  return {static_cast<std::uint8_t>(v & 0xFF), static_cast<std::uint8_t>((v >> 8) & 0xFF),
          static_cast<std::uint8_t>((v >> 16) & 0xFF)};
}

double color_distance(Color a, Color b) {
  const double dr = a.r - b.r;
  const double dg = a.g - b.g;
  const double db = a.b - b.b;
  return std::sqrt(dr * dr + dg * dg + db * db);
}

Color readable_on(Rng& rng, Color bg, double min_contrast) {
  for (int i = 0; i < 64; ++i) {
    const Color c = random_color(rng);
    if (contrast_ratio(c, bg) >= min_contrast) return c;
  }
  const Color black{0, 0, 0};
  const Color white{255, 255, 255};
  return contrast_ratio(black, bg) >= contrast_ratio(white, bg) ? black : white;
}

Style sample_style(const ChartSpec& spec, std::size_t n_series) {
  Rng rng(mix_seed(spec.style_seed, 1));
  Style s;
  s.background = random_color(rng);
  s.text = readable_on(rng, s.background, spec.min_text_contrast);
  s.grid = mix(s.background, s.text, 0.2);
  for (std::size_t k = 0; k < n_series; ++k) {
    Color c = random_color(rng);
    for (int attempt = 0; attempt < 256; ++attempt) {
      bool ok = contrast_ratio(c, s.background) >= kMinSeriesContrast &&
                color_distance(c, s.grid) >= kMinSeriesDistance / 2;
      for (const Color& prev : s.series) ok = ok && color_distance(c, prev) >= kMinSeriesDistance;
      if (ok) break;
      c = random_color(rng);
    }
    s.series.push_back(c);
  }
  const double canvas_scale = std::min(spec.canvas.width, spec.canvas.height) / 512.0;
  const double font = canvas_scale * spec.font_scale;
  s.face = static_cast<int>(rng.uniform_int(0, Font::face_count() - 1));
  s.title_px = static_cast<int>(std::lround(rng.uniform(16, 24) * font));
  s.label_px = static_cast<int>(std::lround(rng.uniform(11, 14) * font));
  s.tick_px = static_cast<int>(std::lround(rng.uniform(9, 12) * font));
  s.value_px = static_cast<int>(std::lround(rng.uniform(9, 12) * font));
  s.bar_fill = rng.uniform(0.45, 0.8);
  s.show_grid = rng.bernoulli(0.6);
  s.line_width = rng.uniform(1.5, 3.5) * std::max(canvas_scale, 0.5);
  s.markers = rng.bernoulli(0.5);
  s.margin = static_cast<int>(std::lround(rng.uniform(8, 18) * canvas_scale));
  s.title_align = static_cast<int>(rng.uniform_int(0, 2));
  return s;
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

int aligned_x(int align, int width, int left, int right) {
  switch (align) {
    case 0: return left;
    case 2: return right - width;
    default: return left + (right - left - width) / 2;
  }
}

// Fits lines of text into max_width using at most max_lines lines, trying
// progressively smaller sizes down to the smallest embedded font.
bool fit_text(int face, int start_px, std::string_view text, int max_width, int max_lines, Font* font,
              std::vector<std::string>* lines) {
  for (int px = std::max(start_px, 8); px >= 8; --px) {
    Font f(face, px);
    if (f.size() > px + 1 && px != start_px) continue;
    auto wrapped = wrap_text(f, text, max_width, max_lines);
    if (!wrapped.empty()) {
      *font = f;
      *lines = std::move(wrapped);
      return true;
    }
  }
  return false;
}

class BodyPainter {
 public:
  BodyPainter(const ChartSpec& spec, bool draw_title_source)
      : spec_(spec),
        tuples_(ir::flatten_values(spec.content)),
        legends_(spec.content.legends()),
        style_(sample_style(spec, is_pie(spec.chart_type) ? spec.content.values.size()
                                                          : std::max<std::size_t>(1, legends_.size()))),
        with_title_source_(draw_title_source),
        img_(spec.canvas.width, spec.canvas.height, style_.background) {
    out_.layout.background = style_.background;
    out_.layout.series_colors = style_.series;
  }

  Rendered run() {
    top_ = style_.margin;
    bottom_ = spec_.canvas.height - style_.margin;
    if (with_title_source_) {
      draw_title();
      draw_source();
    }
    if (is_pie(spec_.chart_type)) {
      draw_pie();
    } else {
      if (!legends_.empty()) draw_legend_row();
      draw_cartesian();
    }
    out_.image = std::move(img_);
    return std::move(out_);
  }

 private:
  void log(DrawnText t) { out_.text_log.push_back(std::move(t)); }

  void draw_title() {
    if (spec_.content.title.empty()) return;
    Font font(style_.face, style_.title_px);
    std::vector<std::string> lines;
    const int width = spec_.canvas.width - 2 * style_.margin;
    if (!fit_text(style_.face, style_.title_px, spec_.content.title, width, 2, &font, &lines)) {
      throw RenderOverflow("title does not fit");
    }
    for (const auto& line : lines) {
      const int x = aligned_x(style_.title_align, font.measure(line), style_.margin,
                              spec_.canvas.width - style_.margin);
      log(font.draw(img_, x, top_, line, style_.text, TextRole::title));
      top_ += font.line_height();
    }
    top_ += style_.margin / 2;
  }

  void draw_source() {
    if (spec_.content.source.empty()) return;
    Font font(style_.face, style_.tick_px);
    std::vector<std::string> lines;
    const int width = spec_.canvas.width - 2 * style_.margin;
    if (!fit_text(style_.face, style_.tick_px, spec_.content.source, width, 1, &font, &lines)) {
      throw RenderOverflow("source does not fit");
    }
    bottom_ -= font.line_height();
    log(font.draw(img_, style_.margin, bottom_, lines[0], style_.text, TextRole::source));
    bottom_ -= style_.margin / 2;
  }

  // Legend entries laid out in at most two centred rows.
  void draw_legend_row() {
    const Font font(style_.face, style_.tick_px);
    const int swatch = std::max(6, font.ascent() - 2);
    const int gap = 4;
    const int spacing = 12;
    const int max_width = spec_.canvas.width - 2 * style_.margin;
    std::vector<std::vector<std::size_t>> rows(1);
    int row_width = 0;
    for (std::size_t k = 0; k < legends_.size(); ++k) {
      const int w = swatch + gap + font.measure(legends_[k]);
      const int needed = rows.back().empty() ? w : row_width + spacing + w;
      if (needed > max_width) {
        if (rows.back().empty()) throw RenderOverflow("legend entry too wide");
        rows.emplace_back();
        row_width = w;
      } else {
        row_width = needed;
      }
      rows.back().push_back(k);
    }
    if (rows.size() > 2) throw RenderOverflow("legend needs more than two rows");
    for (const auto& row : rows) {
      int total = 0;
      for (std::size_t i = 0; i < row.size(); ++i) {
        total += swatch + gap + font.measure(legends_[row[i]]) + (i + 1 < row.size() ? spacing : 0);
      }
      int x = (spec_.canvas.width - total) / 2;
      for (std::size_t k : row) {
        const int sy = top_ + (font.line_height() - swatch) / 2;
        fill_rect(img_, x, sy, x + swatch, sy + swatch, style_.series[k]);
        x += swatch + gap;
        log(font.draw(img_, x, top_, legends_[k], style_.text, TextRole::legend));
        x += font.measure(legends_[k]) + spacing;
      }
      top_ += font.line_height();
    }
    top_ += style_.margin / 2;
  }

  std::size_t bar_series() const {
    switch (spec_.chart_type) {
      case ChartType::SingleColumn: return 1;
      case ChartType::MultiColumn: return legends_.size();
      case ChartType::Combo: return 1;
      default: return 0;
    }
  }

  bool series_is_bar(std::size_t k) const {
    if (spec_.chart_type == ChartType::SingleColumn || spec_.chart_type == ChartType::MultiColumn) return true;
    return spec_.chart_type == ChartType::Combo && k == 0;
  }

  void draw_cartesian() {
    const std::size_t rows = spec_.content.values.size();
    const std::size_t n_series = std::max<std::size_t>(1, legends_.size());
    double lo = tuples_.front().value;
    double hi = lo;
    for (const auto& t : tuples_) {
      lo = std::min(lo, t.value);
      hi = std::max(hi, t.value);
    }
    const Axis axis = nice_axis(lo, hi);
    out_.layout.axis_min = axis.min;
    out_.layout.axis_max = axis.max;

    const Font tick_font(style_.face, style_.tick_px);
    const Font label_font(style_.face, style_.label_px);
    const Font value_font(style_.face, style_.value_px);

    std::vector<std::string> tick_labels;
    int tick_label_width = 0;
    const int n_ticks = static_cast<int>(std::lround((axis.max - axis.min) / axis.step));
    for (int i = 0; i <= n_ticks; ++i) {
      tick_labels.push_back(fixed(axis.min + i * axis.step, axis.decimals));
      tick_label_width = std::max(tick_label_width, tick_font.measure(tick_labels.back()));
    }

    int left = style_.margin;
    if (!spec_.content.y_axis.empty()) left += label_font.line_height() + 4;
    left += tick_label_width + 6;
    const int right = spec_.canvas.width - style_.margin;
    const int plot_w = right - left;
    if (plot_w < spec_.canvas.width * 35 / 100) throw RenderOverflow("plot area too narrow");
    const double slot = static_cast<double>(plot_w) / static_cast<double>(rows);

    // Category labels, wrapped into the slot width.
    Font key_font = tick_font;
    std::vector<std::vector<std::string>> key_lines(rows);
    for (int px = style_.tick_px; ; --px) {
      bool ok = true;
      key_font = Font(style_.face, px);
      for (std::size_t r = 0; r < rows && ok; ++r) {
        key_lines[r] = wrap_text(key_font, spec_.content.values[r].key, static_cast<int>(slot) - 2, 2);
        ok = !key_lines[r].empty();
      }
      if (ok) break;
      if (px <= 8) throw RenderOverflow("category labels do not fit");
    }
    std::size_t max_key_lines = 1;
    for (const auto& l : key_lines) max_key_lines = std::max(max_key_lines, l.size());

    int base = bottom_;
    if (!spec_.content.x_axis.empty()) base -= label_font.line_height() + 2;
    base -= static_cast<int>(max_key_lines) * key_font.line_height() + 4;
    int plot_top = top_ + (spec_.annotated ? value_font.line_height() : tick_font.line_height() / 2);
    const int plot_h = base - plot_top;
    if (plot_h < spec_.canvas.height * 30 / 100) throw RenderOverflow("plot area too short");

    out_.layout.plot_x0 = left;
    out_.layout.plot_x1 = right;
    out_.layout.plot_y0 = plot_top;
    out_.layout.plot_y1 = base;

    auto y_of = [&](double v) { return base - (v - axis.min) / (axis.max - axis.min) * plot_h; };
    const double zero_y = y_of(std::clamp(0.0, axis.min, axis.max));

    // grid and y ticks
    for (int i = 0; i <= n_ticks; ++i) {
      const int y = static_cast<int>(std::lround(y_of(axis.min + i * axis.step)));
      if (style_.show_grid && y != base) fill_rect(img_, left, y, right, y + 1, style_.grid);
      fill_rect(img_, left - 4, y, left, y + 1, style_.text);
      const int w = tick_font.measure(tick_labels[i]);
      log(tick_font.draw(img_, left - 6 - w, y - tick_font.line_height() / 2, tick_labels[i], style_.text,
                         TextRole::y_tick));
    }

    // bars
    const std::size_t n_bar = bar_series();
    const double group = slot * style_.bar_fill;
    for (std::size_t r = 0; r < rows; ++r) {
      const double centre = left + slot * (r + 0.5);
      std::size_t bar_k = 0;
      for (std::size_t k = 0; k < n_series; ++k) {
        if (!series_is_bar(k)) continue;
        const std::size_t idx = r * n_series + k;
        const double bw = group / static_cast<double>(n_bar);
        const int x0 = static_cast<int>(std::lround(centre - group / 2 + bw * bar_k));
        const int x1 = std::max(x0 + 1, static_cast<int>(std::lround(centre - group / 2 + bw * (bar_k + 1))));
        const double y = y_of(tuples_[idx].value);
        fill_rect_aa(img_, x0, x1, std::min(y, zero_y), std::max(y, zero_y), style_.series[k]);
        out_.layout.bars.push_back({idx, x0, x1, std::min(y, zero_y), std::max(y, zero_y)});
        ++bar_k;
      }
    }

    // lines
    for (std::size_t k = 0; k < n_series; ++k) {
      if (series_is_bar(k)) continue;
      std::vector<PointGeometry> pts;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t idx = r * n_series + k;
        pts.push_back({idx, left + slot * (r + 0.5), y_of(tuples_[idx].value)});
      }
      for (std::size_t i = 1; i < pts.size(); ++i) {
        draw_line(img_, pts[i - 1].x, pts[i - 1].y, pts[i].x, pts[i].y, style_.line_width, style_.series[k]);
      }
      for (const auto& p : pts) {
        if (style_.markers || pts.size() == 1) fill_disc(img_, p.x, p.y, style_.line_width + 1.5, style_.series[k]);
        out_.layout.points.push_back(p);
      }
    }

    // axes
    fill_rect(img_, left, static_cast<int>(std::lround(zero_y)), right, static_cast<int>(std::lround(zero_y)) + 1,
              style_.text);
    fill_rect(img_, left - 1, plot_top, left, base + 1, style_.text);

    if (spec_.annotated) {
      for (const auto& b : out_.layout.bars) {
        const double v = tuples_[b.tuple_index].value;
        const std::string s = ir::format_label(v);
        const int w = value_font.measure(s);
        const int x = (b.x0 + b.x1 - w) / 2;
        const int y = v >= 0 ? static_cast<int>(std::floor(b.top)) - value_font.line_height()
                             : static_cast<int>(std::ceil(b.bottom));
        log(value_font.draw(img_, x, y, s, style_.text, TextRole::value_label));
      }
      for (const auto& p : out_.layout.points) {
        const std::string s = ir::format_label(tuples_[p.tuple_index].value);
        const int w = value_font.measure(s);
        const int y = static_cast<int>(std::lround(p.y - style_.line_width - 2)) - value_font.line_height();
        log(value_font.draw(img_, static_cast<int>(std::lround(p.x)) - w / 2, y, s, style_.text,
                            TextRole::value_label));
      }
    }

    // category labels
    for (std::size_t r = 0; r < rows; ++r) {
      const double centre = left + slot * (r + 0.5);
      int y = base + 4;
      for (const auto& line : key_lines[r]) {
        const int w = key_font.measure(line);
        log(key_font.draw(img_, static_cast<int>(std::lround(centre)) - w / 2, y, line, style_.text,
                          TextRole::x_tick));
        y += key_font.line_height();
      }
    }

    if (!spec_.content.x_axis.empty()) {
      std::vector<std::string> lines;
      Font f = label_font;
      if (!fit_text(style_.face, style_.label_px, spec_.content.x_axis, plot_w, 1, &f, &lines)) {
        throw RenderOverflow("x axis label does not fit");
      }
      const int w = f.measure(lines[0]);
      const int y = base + 4 + static_cast<int>(max_key_lines) * key_font.line_height() + 2;
      log(f.draw(img_, left + (plot_w - w) / 2, y, lines[0], style_.text, TextRole::x_axis_label));
    }
    if (!spec_.content.y_axis.empty()) {
      std::vector<std::string> lines;
      Font f = label_font;
      if (!fit_text(style_.face, style_.label_px, spec_.content.y_axis, plot_h, 1, &f, &lines)) {
        throw RenderOverflow("y axis label does not fit");
      }
      const int w = f.measure(lines[0]);
      log(f.draw_vertical(img_, style_.margin, base - (plot_h - w) / 2, lines[0], style_.text,
                          TextRole::y_axis_label));
    }
  }

  void draw_pie() {
    const auto& rows = spec_.content.values;
    double total = 0.0;
    for (const auto& t : tuples_) total += t.value;
    if (!(total > 0.0)) throw RenderOverflow("pie values sum to zero");

    const Font font(style_.face, style_.tick_px);
    const Font value_font(style_.face, style_.value_px);
    int right = spec_.canvas.width - style_.margin;
    const bool labeled = spec_.chart_type == ChartType::PieLabeled;

    if (!labeled) {
      // legend column on the right
      const int swatch = std::max(6, font.ascent() - 2);
      int widest = 0;
      for (const auto& r : rows) widest = std::max(widest, font.measure(r.key));
      const int col_w = swatch + 4 + widest;
      const int needed_h = static_cast<int>(rows.size()) * font.line_height();
      if (needed_h > bottom_ - top_ || col_w > spec_.canvas.width / 2) throw RenderOverflow("pie legend does not fit");
      int y = top_ + (bottom_ - top_ - needed_h) / 2;
      const int x = right - col_w;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const int sy = y + (font.line_height() - swatch) / 2;
        fill_rect(img_, x, sy, x + swatch, sy + swatch, style_.series[i]);
        log(font.draw(img_, x + swatch + 4, y, rows[i].key, style_.text, TextRole::legend));
        y += font.line_height();
      }
      right = x - style_.margin;
    }

    const double cx = (style_.margin + right) / 2.0;
    const double cy = (top_ + bottom_) / 2.0;
    double radius = std::min(right - style_.margin, bottom_ - top_) / 2.0 - 2.0;
    const double min_radius = std::min(spec_.canvas.width, spec_.canvas.height) * 0.12;

    std::vector<double> a0(rows.size());
    std::vector<double> a1(rows.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      a0[i] = kTwoPi * acc / total;
      acc += tuples_[i].value;
      a1[i] = i + 1 == rows.size() ? kTwoPi : kTwoPi * acc / total;
    }

    struct Label {
      int x, y;
      std::string text;
      const Font* font;
      TextRole role;
    };
    std::vector<Label> labels;
    if (labeled) {
      for (;; radius -= 4.0) {
        if (radius < min_radius) throw RenderOverflow("pie labels do not fit");
        labels.clear();
        bool fits = true;
        for (std::size_t i = 0; i < rows.size() && fits; ++i) {
          const double mid = (a0[i] + a1[i]) / 2.0;
          const double ax = cx + (radius + 6.0) * std::sin(mid);
          const double ay = cy - (radius + 6.0) * std::cos(mid);
          const std::string value = ir::format_label(tuples_[i].value);
          const int w = std::max(font.measure(rows[i].key), value_font.measure(value));
          const int h = font.line_height() + value_font.line_height();
          int x = std::sin(mid) >= 0.0 ? static_cast<int>(std::lround(ax))
                                       : static_cast<int>(std::lround(ax)) - w;
          int y = static_cast<int>(std::lround(ay)) - h / 2;
          if (std::cos(mid) > 0.9) y = static_cast<int>(std::lround(ay)) - h;
          if (std::cos(mid) < -0.9) y = static_cast<int>(std::lround(ay));
          if (std::abs(std::sin(mid)) < 0.3) x = static_cast<int>(std::lround(ax)) - w / 2;
          fits = x >= 0 && x + w <= spec_.canvas.width && y >= top_ && y + h <= bottom_;
          labels.push_back({x, y, rows[i].key, &font, TextRole::legend});
          labels.push_back({x, y + font.line_height(), value, &value_font, TextRole::value_label});
        }
        if (fits) break;
      }
    } else if (radius < min_radius) {
      throw RenderOverflow("pie too small");
    }

    for (std::size_t i = 0; i < rows.size(); ++i) {
      fill_sector(img_, cx, cy, radius, a0[i], a1[i], style_.series[i]);
      out_.layout.sectors.push_back({i, a0[i], a1[i]});
    }
    out_.layout.pie_cx = cx;
    out_.layout.pie_cy = cy;
    out_.layout.pie_radius = radius;

    if (labeled) {
      for (const auto& l : labels) log(l.font->draw(img_, l.x, l.y, l.text, style_.text, l.role));
    } else {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const double mid = (a0[i] + a1[i]) / 2.0;
        const std::string value = ir::format_label(tuples_[i].value);
        const int w = value_font.measure(value);
        const int x = static_cast<int>(std::lround(cx + 0.65 * radius * std::sin(mid))) - w / 2;
        const int y = static_cast<int>(std::lround(cy - 0.65 * radius * std::cos(mid))) - value_font.line_height() / 2;
        const Color c = contrast_ratio(style_.text, style_.series[i]) >= 2.0
                            ? style_.text
                            : (luminance(style_.series[i]) > 0.4 ? Color{0, 0, 0} : Color{255, 255, 255});
        log(value_font.draw(img_, x, y, value, c, TextRole::value_label));
      }
    }
    out_.layout.plot_x0 = style_.margin;
    out_.layout.plot_x1 = right;
    out_.layout.plot_y0 = top_;
    out_.layout.plot_y1 = bottom_;
  }

  const ChartSpec& spec_;
  ir::TupleSet tuples_;
  std::vector<std::string> legends_;
  Style style_;
  bool with_title_source_;
  Image img_;
  Rendered out_;
  int top_ = 0;
  int bottom_ = 0;
};

void shift(Rendered& r, int dx, int dy) {
  for (auto& t : r.text_log) {
    t.x0 += dx;
    t.x1 += dx;
    t.y0 += dy;
    t.y1 += dy;
  }
  PlotLayout& l = r.layout;
  l.plot_x0 += dx;
  l.plot_x1 += dx;
  l.plot_y0 += dy;
  l.plot_y1 += dy;
  for (auto& b : l.bars) {
    b.x0 += dx;
    b.x1 += dx;
    b.top += dy;
    b.bottom += dy;
  }
  for (auto& p : l.points) {
    p.x += dx;
    p.y += dy;
  }
  l.pie_cx += dx;
  l.pie_cy += dy;
}

}  // namespace

Axis nice_axis(double data_min, double data_max) {
  const double lo = std::min(0.0, data_min);
  double hi = std::max(0.0, data_max);
  if (hi <= lo) hi = lo + 1.0;
  const double span = (hi - lo) * 1.05;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = 10.0 * mag;
  double mult = 10.0;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (m * mag >= raw) {
      step = m * mag;
      mult = m;
      break;
    }
  }
  Axis a;
  a.step = step;
  a.min = std::floor(lo / step) * step;
  a.max = std::ceil((hi + 0.05 * (hi - lo)) / step) * step;
  if (a.max <= data_max) a.max += step;
  a.decimals = std::max(0, static_cast<int>(-std::floor(std::log10(step))) + (mult == 2.5 ? 1 : 0));
  if (mult == 2.5 && step >= 10.0) a.decimals = 0;
  return a;
}

Rendered render(const ChartSpec& spec) {
  validate_spec(spec);
  if (!spec.two_stage) return BodyPainter(spec, true).run();

  Rendered body = BodyPainter(spec, false).run();
  Rendered composed =
      compose_two_stage(body.image, spec.content.title, spec.content.source, mix_seed(spec.style_seed, 2),
                        spec.font_scale, spec.min_text_contrast);
  shift(body, composed.body_x, composed.body_y);
  composed.layout = std::move(body.layout);
  composed.text_log.insert(composed.text_log.end(), body.text_log.begin(), body.text_log.end());
  return composed;
}

Rendered compose_two_stage(const Image& body, std::string_view title, std::string_view source,
                           std::uint64_t style_seed, double font_scale, double min_text_contrast) {
  Rng rng(style_seed);
  const Color bg = body.empty() ? Color{255, 255, 255} : body.at(0, 0);
  const Color fg = readable_on(rng, bg, min_text_contrast);
  const double scale = std::max(0.5, std::min(body.width(), body.height()) / 512.0);
  const int face = static_cast<int>(rng.uniform_int(0, Font::face_count() - 1));
  const int title_px = std::max(8, static_cast<int>(std::lround(rng.uniform(16, 24) * scale * font_scale)));
  const int source_px = std::max(8, static_cast<int>(std::lround(rng.uniform(9, 12) * scale * font_scale)));
  const int pad_top = static_cast<int>(std::lround(rng.uniform(4, 16) * scale));
  const int pad_gap = static_cast<int>(std::lround(rng.uniform(2, 10) * scale));
  const int pad_bottom = static_cast<int>(std::lround(rng.uniform(4, 12) * scale));
  const int margin = static_cast<int>(std::lround(rng.uniform(6, 18) * scale));
  const int align = static_cast<int>(rng.uniform_int(0, 2));
  const int source_align = static_cast<int>(rng.uniform_int(0, 1)) * 2;

  int width = body.width();
  Font title_font(face, title_px);
  std::vector<std::string> title_lines;
  if (!title.empty()) {
    while (!fit_text(face, title_px, title, width - 2 * margin, 2, &title_font, &title_lines)) {
      width += 16;
      if (width > 8 * std::max(body.width(), 64)) throw RenderOverflow("title cannot be fitted");
    }
  }
  Font source_font(face, source_px);
  std::vector<std::string> source_lines;
  if (!source.empty()) {
    while (!fit_text(face, source_px, source, width - 2 * margin, 1, &source_font, &source_lines)) {
      width += 16;
      if (width > 8 * std::max(body.width(), 64)) throw RenderOverflow("source cannot be fitted");
    }
  }

  const int band_h = pad_top + static_cast<int>(title_lines.size()) * title_font.line_height() + pad_gap;
  const int foot_h = pad_bottom + static_cast<int>(source_lines.size()) * source_font.line_height() + pad_bottom;

  Rendered out;
  out.image = Image(width, band_h + body.height() + foot_h, bg);
  blit(out.image, body, (width - body.width()) / 2, band_h);
  int y = pad_top;
  for (const auto& line : title_lines) {
    const int x = aligned_x(align, title_font.measure(line), margin, width - margin);
    out.text_log.push_back(title_font.draw(out.image, x, y, line, fg, TextRole::title));
    y += title_font.line_height();
  }
  y = band_h + body.height() + pad_bottom;
  for (const auto& line : source_lines) {
    const int x = aligned_x(source_align, source_font.measure(line), margin, width - margin);
    out.text_log.push_back(source_font.draw(out.image, x, y, line, fg, TextRole::source));
  }
  out.layout.background = bg;
  out.body_x = (width - body.width()) / 2;
  out.body_y = band_h;
  return out;
}

}  // namespace chartex::gen
