#include "chartex/pipeline.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <map>

#include "chartex/tinychart/model.h"
#include "chartex/tinychart/vision.h"

namespace chartex::pipeline {
namespace {

nlohmann::ordered_json vector_json(const ir::NumericVector& v) {
  auto arr = nlohmann::ordered_json::array();
  const std::size_t n = v.valid_count();
  for (std::size_t i = 0; i < n; ++i) arr.push_back(v.slots[i]);
  return arr;
}

nlohmann::ordered_json full_vector_json(const ir::NumericVector& v) {
  auto arr = nlohmann::ordered_json::array();
  for (double x : v.slots) arr.push_back(x);
  return arr;
}

}  // namespace

std::optional<ir::NumericVector> values_of(const ir::ChartDict& d, bool* truncated) {
  const auto tuples = ir::flatten_values(d);
  if (truncated) *truncated = tuples.size() > ir::kValueSlots;
  if (tuples.empty()) return std::nullopt;
  std::vector<double> xs;
  xs.reserve(tuples.size());
  for (const auto& t : tuples) {
    if (!std::isfinite(t.value)) return std::nullopt;
    xs.push_back(t.value);
  }
  const auto norm = ir::minmax_normalize(xs);
  ir::NumericVector v;
  for (std::size_t i = 0; i < norm.size() && i < ir::kValueSlots; ++i) {
    v.slots[i] = norm[i];
    v.mask[i] = true;
  }
  return v;
}

PredictionRecord infer(const std::string& id, const gen::Image& img, const tiny::Checkpoint& ckpt,
                       int max_new_tokens) {
  const auto& cfg = ckpt.config;
  const auto patches = tiny::patch_matrix<float>(tiny::prepare_image(img, cfg), cfg);
  const auto g = tiny::generate(ckpt.params, cfg, patches, max_new_tokens);
  PredictionRecord r;
  r.id = id;
  r.raw_text = g.raw_text;
  if (g.aux) {
    for (std::size_t i = 0; i < ir::kValueSlots; ++i) {
      r.u_c.slots[i] = static_cast<double>(g.aux->prediction(static_cast<Eigen::Index>(i)));
      r.u_c.mask[i] = true;
    }
  }
  try {
    r.parsed = ir::parse_raw_output(r.raw_text);
  } catch (const ir::ParseFailed&) {
    return r;
  }
  r.u_r = values_of(*r.parsed, &r.capacity_exceeded);
  return r;
}

double self_consistency(const ir::NumericVector& u_r, const ir::NumericVector& u_c) {
  const std::size_t n = u_r.valid_count();
  if (n == 0) throw NoValues("no parsed values to compare");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += std::abs(u_r.slots[i] - u_c.slots[i]);
  const double s = total / static_cast<double>(n);
  return std::isnan(s) ? 1.0 : std::clamp(s, 0.0, 1.0);
}

void attach_consistency(PredictionRecord& r) {
  r.s.reset();
  if (!r.parsed || !r.u_r || r.u_r->valid_count() == 0) return;
  if (r.u_c.valid_count() == 0) return;
  r.s = self_consistency(*r.u_r, r.u_c);
}

Partition purify(std::vector<PredictionRecord> records, double delta) {
  Partition out;
  for (auto& r : records) {
    r.accepted = r.s.has_value() && *r.s <= delta;
    (r.accepted ? out.accepted : out.rejected).push_back(std::move(r));
  }
  return out;
}

PurificationResult purification_experiment(const std::vector<PredictionRecord>& records,
                                           const std::vector<ir::DatasetRecord>& gts, double delta) {
  std::map<std::string, const ir::ChartDict*> by_id;
  for (const auto& g : gts) by_id[g.image] = &g.gt;

  std::vector<metrics::ImageScore> raw_rows;
  std::vector<metrics::ImageScore> kept_rows;
  for (auto r : records) {
    const auto it = by_id.find(r.id);
    if (it == by_id.end()) throw std::invalid_argument("no ground truth for prediction " + r.id);
    attach_consistency(r);
    const auto score = metrics::score_image(r.id, r.raw_text, *it->second);
    raw_rows.push_back(score);
    if (r.s && *r.s <= delta) kept_rows.push_back(score);
  }
  PurificationResult res;
  res.raw.per_image = raw_rows;
  res.raw.aggregate = metrics::aggregate(raw_rows);
  res.purified.per_image = kept_rows;
  res.purified.aggregate = metrics::aggregate(kept_rows);
  res.raw_samples = raw_rows.size();
  res.purified_samples = kept_rows.size();
  return res;
}

std::vector<PredictionRecord> infer_dataset(const tiny::Checkpoint& ckpt, const std::filesystem::path& data_dir,
                                            const std::string& split, int max_new_tokens,
                                            const Progress& progress) {
  const auto records = ir::read_dataset((data_dir / (split + ".jsonl")).string());
  std::vector<PredictionRecord> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto img = gen::read_png((data_dir / records[i].image).string());
    auto r = infer(records[i].image, img, ckpt, max_new_tokens);
    attach_consistency(r);
    out.push_back(std::move(r));
    if (progress) progress(i + 1, records.size());
  }
  return out;
}

std::string to_json_line(const PredictionRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["raw"] = r.raw_text;
  j["parse_ok"] = r.parsed.has_value();
  j["u_r"] = r.u_r ? vector_json(*r.u_r) : nlohmann::ordered_json(nullptr);
  j["u_c"] = full_vector_json(r.u_c);
  j["s"] = r.s ? nlohmann::ordered_json(*r.s) : nlohmann::ordered_json(nullptr);
  j["accepted"] = r.accepted;
  j["capacity_exceeded"] = r.capacity_exceeded;
  return j.dump();
}

PredictionRecord from_json_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw std::invalid_argument("prediction line is not a JSON object");
  PredictionRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.raw_text = j.at("raw").get<std::string>();
    if (j.contains("u_c") && j["u_c"].is_array()) {
      const auto& arr = j["u_c"];
      for (std::size_t i = 0; i < arr.size() && i < ir::kValueSlots; ++i) {
        if (arr[i].is_number()) {
          r.u_c.slots[i] = arr[i].get<double>();
          r.u_c.mask[i] = true;
        }
      }
    }
    if (j.contains("accepted")) r.accepted = j["accepted"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("prediction line: ") + e.what());
  }
  // Parsed state is recomputed from the raw text so records stay consistent.
  try {
    r.parsed = ir::parse_raw_output(r.raw_text);
    r.u_r = values_of(*r.parsed, &r.capacity_exceeded);
  } catch (const ir::ParseFailed&) {
  }
  attach_consistency(r);
  return r;
}

std::vector<PredictionRecord> read_predictions(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(f, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(from_json_line(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void write_predictions(const std::string& path, const std::vector<PredictionRecord>& records) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const auto& r : records) f << to_json_line(r) << '\n';
  if (!f) throw std::runtime_error("write failed for " + path);
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-24s %8s %8s %8s %9s %9s %9s\n", "run", "strict", "slight", "high", "d_strict",
                "d_slight", "d_high");
  out += buf;
  for (const auto& r : rows) {
    const auto& a = r.aggregate;
    const auto& base = rows.front().aggregate;
    std::snprintf(buf, sizeof(buf), "%-24s %8.4f %8.4f %8.4f %+9.4f %+9.4f %+9.4f\n", r.name.c_str(), a.ap_strict,
                  a.ap_slight, a.ap_high, a.ap_strict - base.ap_strict, a.ap_slight - base.ap_slight,
                  a.ap_high - base.ap_high);
    out += buf;
  }
  return out;
}

}  // namespace chartex::pipeline
