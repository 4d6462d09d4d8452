#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "chartex/chart_ir.h"
#include "chartex/chartgen/raster.h"
#include "chartex/metrics.h"
#include "chartex/tinychart/checkpoint.h"

namespace chartex::pipeline {

struct PredictionRecord {
  std::string id;
  std::string raw_text;
  std::optional<ir::ChartDict> parsed;
  std::optional<ir::NumericVector> u_r;
  ir::NumericVector u_c;
  std::optional<double> s;
  bool accepted = false;
  // More than 256 leaves; s covers the first 256.
  bool capacity_exceeded = false;
};

class NoValues : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Normalized values of a parsed dict, truncated to the slot count. Absent when
// a leaf is not numeric or there are no leaves.
std::optional<ir::NumericVector> values_of(const ir::ChartDict& d, bool* truncated = nullptr);

// Runs the model on one image and fills everything except s and accepted.
PredictionRecord infer(const std::string& id, const gen::Image& img, const tiny::Checkpoint& ckpt,
                       int max_new_tokens);

// Mean |u_r - u_c| over the valid prefix of u_r, clamped to [0, 1].
double self_consistency(const ir::NumericVector& u_r, const ir::NumericVector& u_c);

// Sets s when u_r has values.
void attach_consistency(PredictionRecord& r);

struct Partition {
  std::vector<PredictionRecord> accepted;
  std::vector<PredictionRecord> rejected;
};

Partition purify(std::vector<PredictionRecord> records, double delta);

struct PurificationResult {
  metrics::EvalReport raw;
  metrics::EvalReport purified;
  std::size_t raw_samples = 0;
  std::size_t purified_samples = 0;
};

// Scores every record against its ground truth (matched by id), then the
// accepted subset alone.
PurificationResult purification_experiment(const std::vector<PredictionRecord>& records,
                                           const std::vector<ir::DatasetRecord>& gts, double delta);

using Progress = std::function<void(std::size_t done, std::size_t total)>;

// Inference over <data_dir>/<split>.jsonl.
std::vector<PredictionRecord> infer_dataset(const tiny::Checkpoint& ckpt, const std::filesystem::path& data_dir,
                                            const std::string& split, int max_new_tokens,
                                            const Progress& progress = {});

std::string to_json_line(const PredictionRecord& r);
PredictionRecord from_json_line(const std::string& line);
std::vector<PredictionRecord> read_predictions(const std::string& path);
void write_predictions(const std::string& path, const std::vector<PredictionRecord>& records);

// Side-by-side comparison of several evaluation reports.
struct AblationRow {
  std::string name;
  metrics::Aggregate aggregate;
};
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace chartex::pipeline
