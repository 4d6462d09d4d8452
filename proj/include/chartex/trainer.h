#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "chartex/chart_ir.h"
#include "chartex/chartgen/raster.h"
#include "chartex/tinychart/checkpoint.h"
#include "chartex/tinychart/config.h"
#include "chartex/tinychart/model.h"
#include "chartex/tinychart/tokenizer.h"

namespace chartex::train {

enum class Stage { S1, S2, S3 };
const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct StagePlan {
  Stage stage = Stage::S1;
  tiny::GroupSet trainable;
  tiny::LossKind loss = tiny::LossKind::text_only;
  int epochs = 1;
  double lr = 1e-4;
  int batch_size = 8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Linear warmup over this share of the steps, cosine decay to
  // final_lr_ratio × lr until decay_end, constant afterwards.
  double warmup_frac = 0.05;
  double decay_end = 0.8;
  double final_lr_ratio = 0.1;

  void validate() const;
};

// Trainable groups and loss of each stage, with desk-scale defaults.
StagePlan default_plan(Stage s);

double learning_rate(const StagePlan& plan, std::size_t step, std::size_t total_steps);

struct TrainConfig {
  tiny::ModelConfig model;
  std::vector<StagePlan> plans{default_plan(Stage::S1), default_plan(Stage::S2), default_plan(Stage::S3)};
  int max_new_tokens = 700;

  const StagePlan& plan(Stage s) const;
};

// {"model": {...}, "stages": {"S1": {"epochs": 3, "lr": 3e-4, ...}, ...},
//  "max_new_tokens": 700}; every key optional.
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::string& path);

class DatasetEmpty : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointIncompatible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Example {
  std::string id;
  tiny::TokenSequence seq;
  std::vector<float> patches;
  ir::NumericVector numbers;
};

struct TrainingSet {
  tiny::ModelConfig config;
  std::vector<Example> examples;
  std::size_t skipped_too_long = 0;
};

Example make_example(const std::string& id, const gen::Image& img, const ir::ChartDict& gt,
                     const tiny::ModelConfig& cfg);

// Reads <data_dir>/<split>.jsonl and its images.
TrainingSet load_training_set(const std::filesystem::path& data_dir, const std::string& split,
                              const tiny::ModelConfig& cfg);

struct StepRecord {
  std::size_t step = 0;  // within the stage
  Stage stage = Stage::S1;
  int epoch = 0;
  double l_text = 0;
  double l_num = 0;
  double total = 0;
  double lr = 0;
};

void write_csv_header(std::ostream& os);
void write_csv_row(std::ostream& os, const StepRecord& r);

using StepCallback = std::function<void(const StepRecord&)>;

// Trains ckpt.params in place. Shuffling continues from ckpt.rng_state, and
// the auxiliary decoder is initialized on first use.
std::vector<StepRecord> run_stage(const StagePlan& plan, const TrainingSet& data, tiny::Checkpoint& ckpt,
                                  const StepCallback& on_step = {});

struct ScheduleOptions {
  // When set, the checkpoint after each stage is written to
  // <stage_prefix>.<stage>.ckpt.
  std::string stage_prefix;
  StepCallback on_step;
};

// Runs each plan in order; stages already listed in ckpt.completed_stages
// are skipped, which makes a stage checkpoint a resume point.
std::vector<StepRecord> run_schedule(const std::vector<StagePlan>& plans, const TrainingSet& data,
                                     tiny::Checkpoint& ckpt, const ScheduleOptions& opts = {});

}  // namespace chartex::train
