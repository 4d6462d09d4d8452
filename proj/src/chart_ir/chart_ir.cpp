#include "chartex/chart_ir.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <system_error>

#include <json.hpp>

namespace chartex::ir {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string quote(const std::string& s) {
  return nlohmann::json(s).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

std::string_view trim(std::string_view s) {
  constexpr std::string_view kSpace = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(kSpace);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(kSpace);
  return s.substr(b, e - b + 1);
}

std::string text_field(const ordered_json& obj, const char* name) {
  auto it = obj.find(name);
  if (it == obj.end() || it->is_null()) return {};
  if (it->is_string()) return it->get<std::string>();
  return it->dump();
}

double leaf_value(const ordered_json& v) {
  if (v.is_number()) {
    const double x = v.get<double>();
    return std::isfinite(x) ? x : kNotNumeric;
  }
  if (v.is_string()) {
    try {
      return canonicalize_number(v.get_ref<const std::string&>());
    } catch (const NotNumeric&) {
      return kNotNumeric;
    }
  }
  return kNotNumeric;
}

}  // namespace

std::size_t ChartDict::leaf_count() const {
  std::size_t n = 0;
  for (const auto& row : values) {
    if (const auto* series = std::get_if<LegendSeries>(&row.value)) {
      n += series->size();
    } else {
      ++n;
    }
  }
  return n;
}

std::vector<std::string> ChartDict::legends() const {
  for (const auto& row : values) {
    if (const auto* series = std::get_if<LegendSeries>(&row.value)) {
      std::vector<std::string> out;
      for (const auto& lv : *series) out.push_back(lv.legend);
      return out;
    }
  }
  return {};
}

NumericVector::NumericVector() {
  slots.fill(kNotNumeric);
  mask.fill(false);
}

std::size_t NumericVector::valid_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

void validate(const ChartDict& d) {
  const std::vector<std::string> legends = d.legends();
  if (legends.size() > kMaxLegends) {
    throw InvalidChartDict("more than " + std::to_string(kMaxLegends) + " legends");
  }
  for (const auto& row : d.values) {
    if (const auto* series = std::get_if<LegendSeries>(&row.value)) {
      if (series->size() != legends.size()) {
        throw InvalidChartDict("row '" + row.key + "' has a different legend set");
      }
      for (std::size_t i = 0; i < series->size(); ++i) {
        if ((*series)[i].legend != legends[i]) {
          throw InvalidChartDict("row '" + row.key + "' has a different legend order");
        }
        if (!std::isfinite((*series)[i].value)) {
          throw InvalidChartDict("non-finite value in row '" + row.key + "'");
        }
      }
    } else {
      if (!legends.empty()) {
        throw InvalidChartDict("row '" + row.key + "' is flat in a multi-legend chart");
      }
      if (!std::isfinite(std::get<double>(row.value))) {
        throw InvalidChartDict("non-finite value in row '" + row.key + "'");
      }
    }
  }
}

std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, end);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string format_label(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string serialize(const ChartDict& d) {
  std::string out;
  out.reserve(128 + 24 * d.values.size());
  out += "{\"title\": " + quote(d.title);
  out += ", \"source\": " + quote(d.source);
  out += ", \"x_axis\": " + quote(d.x_axis);
  out += ", \"y_axis\": " + quote(d.y_axis);
  out += ", \"values\": {";
  bool first_row = true;
  for (const auto& row : d.values) {
    if (!first_row) out += ", ";
    first_row = false;
    out += quote(row.key) + ": ";
    if (const auto* series = std::get_if<LegendSeries>(&row.value)) {
      out += '{';
      bool first = true;
      for (const auto& lv : *series) {
        if (!first) out += ", ";
        first = false;
        out += quote(lv.legend) + ": " + format_number(lv.value);
      }
      out += '}';
    } else {
      out += format_number(std::get<double>(row.value));
    }
  }
  out += "}}";
  return out;
}

ChartDict parse_raw_output(std::string_view raw) {
  std::string_view text = trim(raw);
  if (text.size() >= kEndOfSequence.size() &&
      text.substr(text.size() - kEndOfSequence.size()) == kEndOfSequence) {
    text = trim(text.substr(0, text.size() - kEndOfSequence.size()));
  }

  ordered_json root = ordered_json::parse(text.begin(), text.end(), nullptr, false);
  if (root.is_discarded()) throw ParseFailed("malformed dict literal");
  if (!root.is_object()) throw ParseFailed("output is not a dict");

  ChartDict d;
  d.title = text_field(root, "title");
  d.source = text_field(root, "source");
  d.x_axis = text_field(root, "x_axis");
  d.y_axis = text_field(root, "y_axis");

  auto values = root.find("values");
  if (values == root.end() || values->is_null()) return d;
  if (!values->is_object()) throw ParseFailed("'values' is not a dict");

  for (const auto& [key, v] : values->items()) {
    Row row{key, 0.0};
    if (v.is_object()) {
      LegendSeries series;
      for (const auto& [legend, leaf] : v.items()) {
        series.push_back({legend, leaf_value(leaf)});
      }
      row.value = std::move(series);
    } else {
      row.value = leaf_value(v);
    }
    d.values.push_back(std::move(row));
  }
  return d;
}

double canonicalize_number(std::string_view s) {
  std::string_view t = trim(s);
  if (!t.empty() && t.back() == '%') t = trim(t.substr(0, t.size() - 1));
  std::string digits;
  digits.reserve(t.size());
  for (char c : t) {
    if (c != ',') digits += c;
  }
  if (!digits.empty() && digits.front() == '+') digits.erase(0, 1);
  double v = 0.0;
  const char* begin = digits.data();
  const char* end = begin + digits.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (digits.empty() || ec != std::errc{} || ptr != end || !std::isfinite(v)) {
    throw NotNumeric("not a number: '" + std::string(s) + "'");
  }
  return v;
}

TupleSet flatten_values(const ChartDict& d) {
  TupleSet out;
  out.reserve(d.leaf_count());
  for (const auto& row : d.values) {
    if (const auto* series = std::get_if<LegendSeries>(&row.value)) {
      for (const auto& lv : *series) out.push_back({row.key, lv.legend, lv.value});
    } else {
      out.push_back({row.key, std::nullopt, std::get<double>(row.value)});
    }
  }
  return out;
}

std::vector<double> minmax_normalize(const std::vector<double>& xs) {
  if (xs.empty()) throw EmptyInput("minmax_normalize of an empty list");
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  const double min = *lo;
  const double range = *hi - min;
  std::vector<double> out(xs.size(), 0.5);
  if (range > 0.0) {
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = (xs[i] - min) / range;
  }
  return out;
}

NumericVector extract_value_vector(const ChartDict& d) {
  const TupleSet tuples = flatten_values(d);
  if (tuples.size() > kValueSlots) {
    throw TooManyValues(std::to_string(tuples.size()) + " values exceed " +
                        std::to_string(kValueSlots) + " slots");
  }
  NumericVector out;
  if (tuples.empty()) return out;
  std::vector<double> raw;
  raw.reserve(tuples.size());
  for (const auto& t : tuples) {
    if (!std::isfinite(t.value)) throw NotNumeric("value of '" + t.key + "' is not numeric");
    raw.push_back(t.value);
  }
  const std::vector<double> norm = minmax_normalize(raw);
  for (std::size_t i = 0; i < norm.size(); ++i) {
    out.slots[i] = norm[i];
    out.mask[i] = true;
  }
  return out;
}

}  // namespace chartex::ir
