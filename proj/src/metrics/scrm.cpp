#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "chartex/metrics.h"

namespace chartex::metrics {

namespace {

class AugmentingPaths {
 public:
  AugmentingPaths(const std::vector<std::vector<char>>& adj, std::size_t n_right)
      : adj_(adj), match_right_(n_right, -1), visited_(n_right, 0) {}

  std::size_t solve() {
    std::size_t matched = 0;
    for (std::size_t u = 0; u < adj_.size(); ++u) {
      ++stamp_;
      if (augment(u)) ++matched;
    }
    return matched;
  }

 private:
  bool augment(std::size_t u) {
    for (std::size_t v = 0; v < match_right_.size(); ++v) {
      if (!adj_[u][v] || visited_[v] == stamp_) continue;
      visited_[v] = stamp_;
      if (match_right_[v] < 0 || augment(static_cast<std::size_t>(match_right_[v]))) {
        match_right_[v] = static_cast<long>(u);
        return true;
      }
    }
    return false;
  }

  const std::vector<std::vector<char>>& adj_;
  std::vector<long> match_right_;
  std::vector<unsigned> visited_;
  unsigned stamp_ = 0;
};

double mean_of(const std::vector<ImageScore>& rows, double ImageScore::*field) {
  if (rows.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : rows) sum += r.*field;
  return sum / static_cast<double>(rows.size());
}

}  // namespace

const char* to_string(ToleranceName n) {
  switch (n) {
    case ToleranceName::strict: return "strict";
    case ToleranceName::slight: return "slight";
    case ToleranceName::high: return "high";
  }
  return "?";
}

std::string key_string(const ir::Tuple& t) {
  return t.legend ? t.key + "_" + *t.legend : t.key;
}

double relative_error(double pred, double gt) {
  return std::abs(pred - gt) / std::max(std::abs(gt), kRelErrEpsilon);
}

bool tuple_match(const ir::Tuple& p, const ir::Tuple& g, const ToleranceLevel& tol) {
  if (!std::isfinite(p.value)) return false;
  if (!(relative_error(p.value, g.value) <= tol.e_thr)) return false;
  return levenshtein(key_string(p), key_string(g)) <= static_cast<std::size_t>(tol.j_thr);
}

std::size_t max_bipartite_matching(const std::vector<std::vector<char>>& adj, std::size_t n_right) {
  return AugmentingPaths(adj, n_right).solve();
}

double image_ap(const ir::TupleSet& pred, const ir::TupleSet& gt, const ToleranceLevel& tol) {
  const std::size_t denom = std::max(pred.size(), gt.size());
  if (denom == 0) return 1.0;
  std::vector<std::vector<char>> adj(pred.size(), std::vector<char>(gt.size(), 0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < gt.size(); ++j) adj[i][j] = tuple_match(pred[i], gt[j], tol) ? 1 : 0;
  }
  return static_cast<double>(max_bipartite_matching(adj, gt.size())) / static_cast<double>(denom);
}

ImageScore score_image(std::string id, std::string_view raw, const ir::ChartDict& gt) {
  ImageScore s;
  s.id = std::move(id);
  ir::ChartDict pred;
  try {
    pred = ir::parse_raw_output(raw);
    s.parse_ok = true;
  } catch (const ir::ParseFailed&) {
    s.parse_ok = false;
  }
  s.re_title = reverse_edit_distance(pred.title, gt.title);
  s.re_source = reverse_edit_distance(pred.source, gt.source);
  s.re_x_axis = reverse_edit_distance(pred.x_axis, gt.x_axis);
  s.re_y_axis = reverse_edit_distance(pred.y_axis, gt.y_axis);
  if (s.parse_ok) {
    const ir::TupleSet p = ir::flatten_values(pred);
    const ir::TupleSet g = ir::flatten_values(gt);
    s.ap_strict = image_ap(p, g, kStrict);
    s.ap_slight = image_ap(p, g, kSlight);
    s.ap_high = image_ap(p, g, kHigh);
  }
  if (!(s.ap_strict <= s.ap_slight && s.ap_slight <= s.ap_high)) {
    throw std::logic_error("tolerance monotonicity violated on image " + s.id);
  }
  return s;
}

Aggregate aggregate(const std::vector<ImageScore>& rows) {
  Aggregate a;
  a.images = rows.size();
  a.parse_failures = static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [](const ImageScore& r) { return !r.parse_ok; }));
  a.re_title = mean_of(rows, &ImageScore::re_title);
  a.re_source = mean_of(rows, &ImageScore::re_source);
  a.re_x_axis = mean_of(rows, &ImageScore::re_x_axis);
  a.re_y_axis = mean_of(rows, &ImageScore::re_y_axis);
  a.ap_strict = mean_of(rows, &ImageScore::ap_strict);
  a.ap_slight = mean_of(rows, &ImageScore::ap_slight);
  a.ap_high = mean_of(rows, &ImageScore::ap_high);
  return a;
}

EvalReport evaluate_dataset(const std::vector<std::string>& preds,
                            const std::vector<ir::ChartDict>& gts,
                            const std::vector<std::string>& ids) {
  if (preds.size() != gts.size() || preds.size() != ids.size()) {
    throw LengthMismatch("preds, gts and ids must have equal length");
  }
  EvalReport report;
  report.per_image.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    report.per_image.push_back(score_image(ids[i], preds[i], gts[i]));
  }
  report.aggregate = aggregate(report.per_image);
  return report;
}

std::string report_to_json(const EvalReport& report, int indent) {
  nlohmann::ordered_json j;
  const Aggregate& a = report.aggregate;
  j["aggregate"] = {{"images", a.images},       {"parse_failures", a.parse_failures},
                    {"re_title", a.re_title},   {"re_source", a.re_source},
                    {"re_x_axis", a.re_x_axis}, {"re_y_axis", a.re_y_axis},
                    {"ap_strict", a.ap_strict}, {"ap_slight", a.ap_slight},
                    {"ap_high", a.ap_high}};
  j["tolerances"] = nlohmann::ordered_json::array();
  for (const auto& t : kTolerances) {
    j["tolerances"].push_back({{"name", to_string(t.name)}, {"j_thr", t.j_thr}, {"e_thr", t.e_thr}});
  }
  auto& rows = j["per_image"] = nlohmann::ordered_json::array();
  for (const auto& r : report.per_image) {
    rows.push_back({{"id", r.id},
                    {"re_title", r.re_title},
                    {"re_source", r.re_source},
                    {"re_x_axis", r.re_x_axis},
                    {"re_y_axis", r.re_y_axis},
                    {"ap_strict", r.ap_strict},
                    {"ap_slight", r.ap_slight},
                    {"ap_high", r.ap_high},
                    {"parse_ok", r.parse_ok}});
  }
  return j.dump(indent);
}

}  // namespace chartex::metrics
