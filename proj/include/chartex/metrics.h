#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "chartex/chart_ir.h"

namespace chartex::metrics {

enum class ToleranceName { strict, slight, high };

struct ToleranceLevel {
  ToleranceName name;
  int j_thr;     // max edit distance between key strings
  double e_thr;  // max relative error between values
};

inline constexpr ToleranceLevel kStrict{ToleranceName::strict, 0, 0.0};
inline constexpr ToleranceLevel kSlight{ToleranceName::slight, 2, 0.05};
inline constexpr ToleranceLevel kHigh{ToleranceName::high, 5, 0.1};
inline constexpr std::array<ToleranceLevel, 3> kTolerances{kStrict, kSlight, kHigh};

// Denominator floor for the relative error, so a zero ground truth is
// matched only by an (almost) zero prediction.
inline constexpr double kRelErrEpsilon = 1e-9;

const char* to_string(ToleranceName n);

// Decodes UTF-8 into code points. Invalid bytes map to distinct values in the
// U+DC80..U+DCFF range, so broken input still compares bytewise.
std::u32string decode_utf8(std::string_view s);

std::size_t levenshtein(std::u32string_view a, std::u32string_view b);
std::size_t levenshtein(std::string_view a, std::string_view b);

// 1 - Levenshtein / max length over code points; both empty -> 1.
double reverse_edit_distance(std::string_view pred, std::string_view gt);

std::string key_string(const ir::Tuple& t);
double relative_error(double pred, double gt);

bool tuple_match(const ir::Tuple& p, const ir::Tuple& g, const ToleranceLevel& tol);

// Size of a maximum one-to-one matching in a bipartite graph given as a
// dense adjacency matrix (rows = left side). Kuhn's augmenting paths.
std::size_t max_bipartite_matching(const std::vector<std::vector<char>>& adj, std::size_t n_right);

// matched / max(|pred|, |gt|) under a maximum matching; 1 when both empty.
double image_ap(const ir::TupleSet& pred, const ir::TupleSet& gt, const ToleranceLevel& tol);

struct ImageScore {
  std::string id;
  double re_title = 0.0;
  double re_source = 0.0;
  double re_x_axis = 0.0;
  double re_y_axis = 0.0;
  double ap_strict = 0.0;
  double ap_slight = 0.0;
  double ap_high = 0.0;
  bool parse_ok = false;
};

struct Aggregate {
  double re_title = 0.0;
  double re_source = 0.0;
  double re_x_axis = 0.0;
  double re_y_axis = 0.0;
  double ap_strict = 0.0;
  double ap_slight = 0.0;
  double ap_high = 0.0;
  std::size_t images = 0;
  std::size_t parse_failures = 0;
};

struct EvalReport {
  std::vector<ImageScore> per_image;
  Aggregate aggregate;
};

class LengthMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

ImageScore score_image(std::string id, std::string_view raw, const ir::ChartDict& gt);

// Column means over the given per-image rows.
Aggregate aggregate(const std::vector<ImageScore>& rows);

EvalReport evaluate_dataset(const std::vector<std::string>& preds,
                            const std::vector<ir::ChartDict>& gts,
                            const std::vector<std::string>& ids);

std::string report_to_json(const EvalReport& report, int indent = 2);

}  // namespace chartex::metrics
