#include "chartex/chartgen/spec.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "chartex/chartgen/corpus.h"
#include "chartex/chartgen/rng.h"

namespace chartex::gen {

const char* to_string(ChartType t) {
  switch (t) {
    case ChartType::SingleColumn: return "SingleColumn";
    case ChartType::MultiColumn: return "MultiColumn";
    case ChartType::SingleLine: return "SingleLine";
    case ChartType::MultiLine: return "MultiLine";
    case ChartType::Combo: return "Combo";
    case ChartType::PieLabeled: return "PieLabeled";
    case ChartType::PieLegend: return "PieLegend";
  }
  return "?";
}

ChartType chart_type_from_string(std::string_view s) {
  for (ChartType t : kAllChartTypes) {
    if (s == to_string(t)) return t;
  }
  throw InvalidConfig("unknown chart type '" + std::string(s) + "'");
}

bool is_pie(ChartType t) { return t == ChartType::PieLabeled || t == ChartType::PieLegend; }

bool is_multi_series(ChartType t) {
  return t == ChartType::MultiColumn || t == ChartType::MultiLine || t == ChartType::Combo;
}

double ValueDistribution::sample(Rng& rng) const {
  if (kind == Kind::IntegerRange) {
    return static_cast<double>(rng.uniform_int(static_cast<std::int64_t>(std::ceil(low)),
                                               static_cast<std::int64_t>(std::floor(high))));
  }
  double v = kind == Kind::LogUniform ? std::exp(rng.uniform(std::log(low), std::log(high)))
                                      : rng.uniform(low, high);
  const double scale = std::pow(10.0, decimals);
  v = std::round(v * scale) / scale;
  return v == 0.0 ? 0.0 : v;  // no negative zero
}

void ValueDistribution::validate() const {
  if (!(low < high)) throw InvalidConfig("value distribution needs low < high");
  if (decimals < 0 || decimals > 3) throw InvalidConfig("decimals must be in [0, 3]");
  if (kind == Kind::LogUniform && low <= 0.0) throw InvalidConfig("log-uniform values need low > 0");
  if (kind == Kind::IntegerRange && std::ceil(low) > std::floor(high)) {
    throw InvalidConfig("integer range contains no integers");
  }
}

GeneratorConfig GeneratorConfig::defaults() {
  GeneratorConfig c;
  for (ChartType t : kAllChartTypes) c.type_mix.emplace_back(t, is_pie(t) ? 0.25 / 2 : 0.75 / 5);
  return c;
}

void GeneratorConfig::validate() const {
  double total = 0.0;
  for (const auto& [t, w] : type_mix) {
    if (w < 0.0) throw InvalidConfig("negative weight in type_mix");
    total += w;
  }
  if (type_mix.empty() || total <= 0.0) throw InvalidConfig("type_mix has no positive weight");
  if (min_rows < 1 || min_rows > max_rows) throw InvalidConfig("row range must satisfy 1 <= min <= max");
  if (min_legends < 2 || max_legends > static_cast<int>(ir::kMaxLegends) || min_legends > max_legends) {
    throw InvalidConfig("legend range must lie within [2, 3]");
  }
  values.validate();
  for (const auto& [t, w] : type_mix) {
    if (w > 0.0 && is_pie(t) && values.low < 0.0) throw InvalidConfig("pie charts need non-negative values");
  }
  auto prob = [](double p, const char* name) {
    if (p < 0.0 || p > 1.0) throw InvalidConfig(std::string(name) + " must be a probability");
  };
  prob(annotated_prob, "annotated_prob");
  prob(two_stage_prob, "two_stage_prob");
  prob(source_prob, "source_prob");
  prob(axis_label_prob, "axis_label_prob");
  if (title_min_words < 1 || title_min_words > title_max_words) throw InvalidConfig("bad title word range");
  if (source_min_words < 1 || source_min_words > source_max_words) throw InvalidConfig("bad source word range");
  if (axis_max_words < 1 || key_max_words < 1 || legend_max_words < 1) throw InvalidConfig("word counts must be >= 1");
  if (title_max_chars < 1 || key_max_chars < 1 || legend_max_chars < 1) throw InvalidConfig("char limits must be >= 1");
  if (canvas.width < 64 || canvas.height < 64) throw InvalidConfig("canvas must be at least 64x64");
  if (font_scale <= 0.0) throw InvalidConfig("font_scale must be positive");
  if (min_text_contrast < 1.0 || min_text_contrast > 15.0) throw InvalidConfig("min_text_contrast out of range");
}

GeneratorConfig parse_generator_config(std::string_view json_text) {
  const auto j = nlohmann::json::parse(json_text.begin(), json_text.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw InvalidConfig("config is not a JSON object");
  GeneratorConfig c = GeneratorConfig::defaults();
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "type_mix") {
        c.type_mix.clear();
        for (const auto& [name, w] : v.items()) {
          const double weight = w.get<double>();
          if (name == "pie") {
            c.type_mix.emplace_back(ChartType::PieLabeled, weight / 2);
            c.type_mix.emplace_back(ChartType::PieLegend, weight / 2);
          } else if (name == "barline") {
            for (ChartType t : kAllChartTypes) {
              if (!is_pie(t)) c.type_mix.emplace_back(t, weight / 5);
            }
          } else {
            c.type_mix.emplace_back(chart_type_from_string(name), weight);
          }
        }
      } else if (key == "rows") {
        c.min_rows = v.at(0).get<int>();
        c.max_rows = v.at(1).get<int>();
      } else if (key == "legends") {
        c.min_legends = v.at(0).get<int>();
        c.max_legends = v.at(1).get<int>();
      } else if (key == "values") {
        const std::string kind = v.value("kind", "UniformRange");
        if (kind == "UniformRange") {
          c.values.kind = ValueDistribution::Kind::UniformRange;
        } else if (kind == "LogUniform") {
          c.values.kind = ValueDistribution::Kind::LogUniform;
        } else if (kind == "IntegerRange") {
          c.values.kind = ValueDistribution::Kind::IntegerRange;
        } else {
          throw InvalidConfig("unknown value distribution '" + kind + "'");
        }
        c.values.low = v.value("low", c.values.low);
        c.values.high = v.value("high", c.values.high);
        c.values.decimals = v.value("decimals", c.values.decimals);
        if (c.values.kind == ValueDistribution::Kind::IntegerRange) c.values.decimals = 0;
      } else if (key == "annotated_prob") {
        c.annotated_prob = v.get<double>();
      } else if (key == "two_stage_prob") {
        c.two_stage_prob = v.get<double>();
      } else if (key == "title_words") {
        c.title_min_words = v.at(0).get<int>();
        c.title_max_words = v.at(1).get<int>();
      } else if (key == "title_max_chars") {
        c.title_max_chars = v.get<int>();
      } else if (key == "source_prob") {
        c.source_prob = v.get<double>();
      } else if (key == "source_words") {
        c.source_min_words = v.at(0).get<int>();
        c.source_max_words = v.at(1).get<int>();
      } else if (key == "axis_label_prob") {
        c.axis_label_prob = v.get<double>();
      } else if (key == "axis_max_words") {
        c.axis_max_words = v.get<int>();
      } else if (key == "key_max_words") {
        c.key_max_words = v.get<int>();
      } else if (key == "key_max_chars") {
        c.key_max_chars = v.get<int>();
      } else if (key == "legend_max_words") {
        c.legend_max_words = v.get<int>();
      } else if (key == "legend_max_chars") {
        c.legend_max_chars = v.get<int>();
      } else if (key == "corpus") {
        c.corpus_path = v.get<std::string>();
      } else if (key == "canvas") {
        c.canvas.width = v.at(0).get<int>();
        c.canvas.height = v.at(1).get<int>();
      } else if (key == "font_scale") {
        c.font_scale = v.get<double>();
      } else if (key == "min_text_contrast") {
        c.min_text_contrast = v.get<double>();
      } else {
        throw InvalidConfig("unknown config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

GeneratorConfig load_generator_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  GeneratorConfig c = parse_generator_config(buf.str());
  // Corpus paths in a config file are relative to that file.
  if (!c.corpus_path.empty() && std::filesystem::path(c.corpus_path).is_relative()) {
    c.corpus_path = (std::filesystem::path(path).parent_path() / c.corpus_path).string();
  }
  return c;
}

void validate_spec(const ChartSpec& spec) {
  try {
    ir::validate(spec.content);
  } catch (const ir::InvalidChartDict& e) {
    throw InvalidConfig(e.what());
  }
  const std::size_t legends = spec.content.legends().size();
  if (is_multi_series(spec.chart_type)) {
    if (legends < 2 || legends > ir::kMaxLegends) throw InvalidConfig("multi-series chart needs 2-3 legends");
  } else if (legends != 0) {
    throw InvalidConfig(std::string(to_string(spec.chart_type)) + " content must be flat");
  }
  if (is_pie(spec.chart_type)) {
    for (const auto& t : ir::flatten_values(spec.content)) {
      if (t.value < 0.0) throw InvalidConfig("pie values must be non-negative");
    }
  }
  if (spec.content.values.empty()) throw InvalidConfig("chart has no rows");
  if (spec.canvas.width < 64 || spec.canvas.height < 64) throw InvalidConfig("canvas too small");
}

namespace {

std::vector<std::string> unique_phrases(Rng& rng, const WordCorpus& corpus, std::size_t n, int max_words,
                                        int max_chars) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  int attempts = 0;
  while (out.size() < n) {
    std::string p = corpus.phrase(rng, 1, max_words, max_chars, true);
    if (seen.insert(p).second) {
      out.push_back(std::move(p));
    } else if (++attempts > 1000) {
      // corpus too small for unique names; disambiguate with a suffix
      p += " " + std::to_string(out.size() + 1);
      seen.insert(p);
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace

ChartSpec sample_spec(std::uint64_t seed, const GeneratorConfig& config) {
  config.validate();
  Rng rng(seed);
  const WordCorpus& corpus = corpus_for(config.corpus_path);

  std::vector<double> weights;
  for (const auto& [t, w] : config.type_mix) weights.push_back(w);
  ChartSpec spec;
  spec.chart_type = config.type_mix[rng.weighted(weights)].first;
  spec.canvas = config.canvas;
  spec.font_scale = config.font_scale;
  spec.min_text_contrast = config.min_text_contrast;

  const auto rows = static_cast<std::size_t>(rng.uniform_int(config.min_rows, config.max_rows));
  const auto keys = unique_phrases(rng, corpus, rows, config.key_max_words, config.key_max_chars);
  std::vector<std::string> legends;
  if (is_multi_series(spec.chart_type)) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(config.min_legends, config.max_legends));
    legends = unique_phrases(rng, corpus, n, config.legend_max_words, config.legend_max_chars);
  }

  ir::ChartDict& d = spec.content;
  d.title = corpus.phrase(rng, config.title_min_words, config.title_max_words, config.title_max_chars, true);
  if (rng.bernoulli(config.source_prob)) {
    d.source = corpus.phrase(rng, config.source_min_words, config.source_max_words, config.title_max_chars, true);
  }
  const bool pie = is_pie(spec.chart_type);
  const bool x_label = rng.bernoulli(config.axis_label_prob);
  const bool y_label = rng.bernoulli(config.axis_label_prob);
  if (!pie && x_label) d.x_axis = corpus.phrase(rng, 1, config.axis_max_words, config.title_max_chars, true);
  if (!pie && y_label) d.y_axis = corpus.phrase(rng, 1, config.axis_max_words, config.title_max_chars, true);

  for (const auto& key : keys) {
    if (legends.empty()) {
      d.values.push_back({key, config.values.sample(rng)});
    } else {
      ir::LegendSeries series;
      for (const auto& legend : legends) series.push_back({legend, config.values.sample(rng)});
      d.values.push_back({key, std::move(series)});
    }
  }

  const bool annotated_draw = rng.bernoulli(config.annotated_prob);
  spec.annotated = pie || annotated_draw;
  spec.style_seed = rng.next();
  spec.two_stage = rng.bernoulli(config.two_stage_prob);
  return spec;
}

}  // namespace chartex::gen
