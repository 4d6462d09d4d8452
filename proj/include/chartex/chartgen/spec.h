#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "chartex/chart_ir.h"

namespace chartex::gen {

enum class ChartType { SingleColumn, MultiColumn, SingleLine, MultiLine, Combo, PieLabeled, PieLegend };

inline constexpr ChartType kAllChartTypes[] = {ChartType::SingleColumn, ChartType::MultiColumn,
                                               ChartType::SingleLine,   ChartType::MultiLine,
                                               ChartType::Combo,        ChartType::PieLabeled,
                                               ChartType::PieLegend};

const char* to_string(ChartType t);
ChartType chart_type_from_string(std::string_view s);
bool is_pie(ChartType t);
bool is_multi_series(ChartType t);

class InvalidConfig : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ValueDistribution {
  enum class Kind { UniformRange, LogUniform, IntegerRange };
  Kind kind = Kind::UniformRange;
  double low = 0.0;
  double high = 100.0;
  int decimals = 1;

  double sample(class Rng& rng) const;
  void validate() const;
};

struct Canvas {
  int width = 512;
  int height = 512;
  bool operator==(const Canvas&) const = default;
};

struct GeneratorConfig {
  std::vector<std::pair<ChartType, double>> type_mix;
  int min_rows = 2;
  int max_rows = 12;
  int min_legends = 2;
  int max_legends = 3;
  ValueDistribution values;
  double annotated_prob = 0.5;
  double two_stage_prob = 0.5;

  int title_min_words = 2;
  int title_max_words = 8;
  int title_max_chars = 64;
  double source_prob = 0.8;
  int source_min_words = 1;
  int source_max_words = 4;
  double axis_label_prob = 0.8;
  int axis_max_words = 3;
  int key_max_words = 2;
  int key_max_chars = 14;
  int legend_max_words = 2;
  int legend_max_chars = 14;

  std::string corpus_path;  // empty: built-in word list
  Canvas canvas;
  double font_scale = 1.0;
  double min_text_contrast = 2.0;

  // Barline types split 0.75 evenly, pie types 0.25 evenly.
  static GeneratorConfig defaults();
  void validate() const;
};

// Parses the JSON config format. Unknown keys are rejected; missing keys
// keep their defaults. "type_mix" accepts chart type names plus the groups
// "barline" (the five bar/line types) and "pie" (both pie types).
GeneratorConfig parse_generator_config(std::string_view json_text);
GeneratorConfig load_generator_config(const std::string& path);

struct ChartSpec {
  ChartType chart_type = ChartType::SingleColumn;
  ir::ChartDict content;
  bool annotated = false;
  std::uint64_t style_seed = 0;
  bool two_stage = false;
  Canvas canvas;
  // Rendering knobs copied from the generator config so a spec alone
  // re-renders identically.
  double font_scale = 1.0;
  double min_text_contrast = 2.0;

  bool operator==(const ChartSpec&) const = default;
};

// Throws InvalidConfig when the content shape does not suit the chart type.
void validate_spec(const ChartSpec& spec);

ChartSpec sample_spec(std::uint64_t seed, const GeneratorConfig& config);

}  // namespace chartex::gen
