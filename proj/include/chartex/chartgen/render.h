#pragma once

#include <cstdint>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "chartex/chartgen/raster.h"
#include "chartex/chartgen/spec.h"
#include "chartex/chartgen/text.h"

namespace chartex::gen {

class RenderOverflow : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Where the data marks ended up, indexed like flatten_values(content).
struct BarGeometry {
  std::size_t tuple_index = 0;
  int x0 = 0, x1 = 0;       // columns [x0, x1)
  double top = 0.0;         // continuous row coordinates
  double bottom = 0.0;
};

struct PointGeometry {
  std::size_t tuple_index = 0;
  double x = 0.0, y = 0.0;
};

struct SectorGeometry {
  std::size_t tuple_index = 0;
  double a0 = 0.0, a1 = 0.0;  // radians, clockwise from 12 o'clock
};

struct PlotLayout {
  int plot_x0 = 0, plot_y0 = 0, plot_x1 = 0, plot_y1 = 0;
  double axis_min = 0.0, axis_max = 0.0;
  std::vector<BarGeometry> bars;
  std::vector<PointGeometry> points;
  double pie_cx = 0.0, pie_cy = 0.0, pie_radius = 0.0;
  std::vector<SectorGeometry> sectors;
  Color background;
  std::vector<Color> series_colors;  // per legend, or per row for pies
};

struct Rendered {
  Image image;
  std::vector<DrawnText> text_log;
  PlotLayout layout;
  // Top-left corner of the chart body inside image (non-zero after
  // two-stage composition).
  int body_x = 0;
  int body_y = 0;
};

// Renders the chart. Two-stage specs get their title and source composited
// by compose_two_stage after the body is drawn. Throws RenderOverflow when
// labels cannot be fitted on the canvas.
Rendered render(const ChartSpec& spec);

// Adds a title band above and a source line below an already rendered body.
// Titles wrap to at most two lines; text that still does not fit widens the
// canvas instead of being clipped.
Rendered compose_two_stage(const Image& body, std::string_view title, std::string_view source,
                           std::uint64_t style_seed, double font_scale = 1.0, double min_text_contrast = 2.0);

// Nice axis range including zero.
struct Axis {
  double min = 0.0, max = 1.0, step = 0.2;
  int decimals = 1;
};
Axis nice_axis(double data_min, double data_max);

}  // namespace chartex::gen
