#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace chartex::ir {

inline constexpr std::size_t kMaxLegends = 3;
inline constexpr std::size_t kValueSlots = 256;
inline constexpr std::string_view kEndOfSequence = "</s>";

// Marker carried by leaves whose text could not be read as a number. Never
// matches a ground-truth value.
inline constexpr double kNotNumeric = std::numeric_limits<double>::quiet_NaN();

struct LegendValue {
  std::string legend;
  double value = 0.0;
  bool operator==(const LegendValue&) const = default;
};

using LegendSeries = std::vector<LegendValue>;

struct Row {
  std::string key;
  std::variant<double, LegendSeries> value;
  bool operator==(const Row&) const = default;

  bool nested() const { return std::holds_alternative<LegendSeries>(value); }
};

// Structured extraction target. Row and legend order are significant.
struct ChartDict {
  std::string title;
  std::string source;
  std::string x_axis;
  std::string y_axis;
  std::vector<Row> values;

  bool operator==(const ChartDict&) const = default;

  std::size_t leaf_count() const;
  // Legend names of the first nested row, or empty for flat charts.
  std::vector<std::string> legends() const;
};

struct Tuple {
  std::string key;
  std::optional<std::string> legend;
  double value = 0.0;
  bool operator==(const Tuple&) const = default;
};

using TupleSet = std::vector<Tuple>;

struct NumericVector {
  std::array<double, kValueSlots> slots{};
  std::array<bool, kValueSlots> mask{};

  NumericVector();
  std::size_t valid_count() const;
};

class ParseFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotNumeric : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TooManyValues : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidChartDict : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Throws InvalidChartDict when a ground-truth dict breaks the structural
// invariants (finite leaves, uniform legend sets, at most three legends).
void validate(const ChartDict& d);

std::string serialize(const ChartDict& d);

// Strips a trailing end-of-sequence marker and whitespace, then parses the
// dict literal. Absent text fields come back empty; leaves that are not
// numeric carry kNotNumeric.
ChartDict parse_raw_output(std::string_view raw);

// "70.8%" -> 70.8, "1,234" -> 1234. Throws NotNumeric.
double canonicalize_number(std::string_view s);

TupleSet flatten_values(const ChartDict& d);

std::vector<double> minmax_normalize(const std::vector<double>& xs);

// Throws TooManyValues past kValueSlots leaves, NotNumeric on a sentinel leaf.
NumericVector extract_value_vector(const ChartDict& d);

// Shortest round-trip decimal form, always with a fractional part or
// exponent ("1.0", "70.8", "1e+20").
std::string format_number(double v);

// Label form used when a value is drawn on a chart: shortest round-trip
// decimal without a trailing ".0" ("42", "70.8").
std::string format_label(double v);

// One line of a dataset manifest (JSONL).
struct DatasetRecord {
  std::string image;
  ChartDict gt;
  bool annotated = false;
  std::string chart_type;
};

std::string to_jsonl_line(const DatasetRecord& r);
DatasetRecord from_jsonl_line(std::string_view line);

// Reads every non-empty line of a manifest. Throws std::runtime_error on I/O
// or schema errors, naming the offending line.
std::vector<DatasetRecord> read_dataset(const std::string& path);

}  // namespace chartex::ir
