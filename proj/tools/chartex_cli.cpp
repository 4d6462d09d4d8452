#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "chartex/chart_ir.h"
#include "chartex/chartgen/generate.h"
#include "chartex/metrics.h"
#include "chartex/pipeline.h"
#include "chartex/trainer.h"

namespace {

namespace fs = std::filesystem;
using namespace chartex;

int run_gen(std::size_t n, std::uint64_t seed, const std::string& out_dir, const std::string& config_path) {
  const gen::GeneratorConfig config =
      config_path.empty() ? gen::GeneratorConfig::defaults() : gen::load_generator_config(config_path);
  const gen::CorpusSummary s = gen::generate_corpus(n, seed, config, out_dir);
  std::cout << "wrote " << s.records << " records to " << out_dir << " (train " << s.train << ", val " << s.val
            << ", test " << s.test << "; " << s.resamples << " specs resampled)\n";
  return 0;
}

// Predictions as JSON lines carrying at least "id" and "raw".
std::map<std::string, std::string> read_raw_predictions(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(f, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("id") || !j.contains("raw")) {
      throw std::runtime_error(path + ":" + std::to_string(n) + ": expected an object with id and raw");
    }
    out[j["id"].get<std::string>()] = j["raw"].get<std::string>();
  }
  return out;
}

void print_aggregate(const char* label, const metrics::Aggregate& a) {
  std::printf("%-10s images %4zu  AP strict %.4f  slight %.4f  high %.4f  RE title %.4f  source %.4f  x %.4f  y %.4f"
              "  parse failures %zu\n",
              label, a.images, a.ap_strict, a.ap_slight, a.ap_high, a.re_title, a.re_source, a.re_x_axis,
              a.re_y_axis, a.parse_failures);
}

int run_score(const std::string& preds_path, const std::string& gt_path, const std::string& out_path) {
  const auto gts = ir::read_dataset(gt_path);
  auto preds = read_raw_predictions(preds_path);
  std::vector<std::string> raws, ids;
  std::vector<ir::ChartDict> dicts;
  for (const auto& g : gts) {
    auto it = preds.find(g.image);
    raws.push_back(it == preds.end() ? std::string() : it->second);
    if (it != preds.end()) preds.erase(it);
    ids.push_back(g.image);
    dicts.push_back(g.gt);
  }
  if (!preds.empty()) throw metrics::LengthMismatch("prediction '" + preds.begin()->first + "' has no ground truth");
  const auto report = metrics::evaluate_dataset(raws, dicts, ids);
  std::ofstream f(out_path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + out_path);
  f << metrics::report_to_json(report) << '\n';
  print_aggregate("score", report.aggregate);
  return 0;
}

struct TrainArgs {
  std::string stage = "all";
  std::string data;
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::string init;
  std::string log;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  const train::TrainConfig tc = a.config.empty() ? train::TrainConfig{} : train::load_train_config(a.config);
  tiny::Checkpoint ckpt;
  if (a.init.empty()) {
    ckpt = tiny::new_checkpoint(tc.model, a.seed);
  } else {
    ckpt = tiny::load_checkpoint(a.init);
    if (!a.config.empty() && !(ckpt.config == tc.model)) {
      throw train::CheckpointIncompatible("--init checkpoint was built with a different model config");
    }
  }

  std::vector<train::StagePlan> plans;
  if (a.stage == "all") {
    plans = tc.plans;
  } else {
    plans.push_back(tc.plan(train::stage_from_string(a.stage)));
    // An explicit stage request retrains it even if the checkpoint lists it.
    auto& done = ckpt.completed_stages;
    done.erase(std::remove(done.begin(), done.end(), train::to_string(plans[0].stage)), done.end());
  }

  const auto t0 = std::chrono::steady_clock::now();
  const train::TrainingSet data = train::load_training_set(a.data, "train", ckpt.config);
  std::cerr << "loaded " << data.examples.size() << " training examples";
  if (data.skipped_too_long) std::cerr << " (" << data.skipped_too_long << " longer than max_seq skipped)";
  std::cerr << "\n";

  const std::string log_path = a.log.empty() ? a.out + ".csv" : a.log;
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + log_path);
  train::write_csv_header(log);

  train::ScheduleOptions opts;
  if (plans.size() > 1) opts.stage_prefix = a.out;
  opts.on_step = [&](const train::StepRecord& r) {
    train::write_csv_row(log, r);
    if (!a.quiet && r.step % 50 == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "[%7.1fs] %s epoch %d step %5zu  text %.4f  num %.4f  lr %.2e\n", secs,
                   train::to_string(r.stage), r.epoch, r.step, r.l_text, r.l_num, r.lr);
    }
  };
  train::run_schedule(plans, data, ckpt, opts);
  tiny::save_checkpoint(a.out, ckpt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << "saved " << a.out << " after " << secs << " s\n";
  return 0;
}

std::vector<pipeline::PredictionRecord> predict(const std::string& ckpt_path, const std::string& data,
                                                const std::string& split, int max_new_tokens) {
  const auto ckpt = tiny::load_checkpoint(ckpt_path);
  return pipeline::infer_dataset(ckpt, data, split, max_new_tokens, [](std::size_t done, std::size_t total) {
    if (done % 20 == 0 || done == total) std::fprintf(stderr, "inferred %zu/%zu\n", done, total);
  });
}

int run_infer(const std::string& ckpt, const std::string& data, const std::string& split, const std::string& out,
              int max_new_tokens) {
  const auto records = predict(ckpt, data, split, max_new_tokens);
  pipeline::write_predictions(out, records);
  std::size_t parsed = 0;
  for (const auto& r : records) parsed += r.parsed.has_value();
  std::cout << "wrote " << records.size() << " predictions to " << out << " (" << parsed << " parsed)\n";
  return 0;
}

int run_filter(const std::string& preds, double delta, const std::string& out, const std::string& rejected_out) {
  auto part = pipeline::purify(pipeline::read_predictions(preds), delta);
  pipeline::write_predictions(out, part.accepted);
  if (!rejected_out.empty()) pipeline::write_predictions(rejected_out, part.rejected);
  std::cout << "accepted " << part.accepted.size() << ", rejected " << part.rejected.size() << " at delta " << delta
            << "\n";
  return 0;
}

int run_experiment(const std::string& ckpt, const std::string& data, const std::string& split, double delta,
                   int max_new_tokens, const std::string& preds_in) {
  const auto records = preds_in.empty() ? predict(ckpt, data, split, max_new_tokens)
                                        : pipeline::read_predictions(preds_in);
  const auto gts = ir::read_dataset((fs::path(data) / (split + ".jsonl")).string());
  const auto res = pipeline::purification_experiment(records, gts, delta);
  std::printf("delta %.3f\n", delta);
  print_aggregate("raw", res.raw.aggregate);
  print_aggregate("purified", res.purified.aggregate);
  std::printf("image samples: raw %zu, purified %zu\n", res.raw_samples, res.purified_samples);
  std::printf("AP strict change %+.4f\n", res.purified.aggregate.ap_strict - res.raw.aggregate.ap_strict);
  return 0;
}

int run_ablation(const std::vector<std::string>& ckpts, const std::string& data, const std::string& split,
                 int max_new_tokens) {
  const auto gts = ir::read_dataset((fs::path(data) / (split + ".jsonl")).string());
  std::vector<pipeline::AblationRow> rows;
  for (const auto& c : ckpts) {
    const auto records = predict(c, data, split, max_new_tokens);
    const auto res = pipeline::purification_experiment(records, gts, 1.0);
    rows.push_back({fs::path(c).filename().string(), res.raw.aggregate});
  }
  std::cout << pipeline::ablation_table(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chart structural extraction toolkit"};
  app.require_subcommand(1);

  std::size_t gen_n = 100;
  std::uint64_t gen_seed = 0;
  std::string gen_out, gen_config;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic chart corpus");
  gen->add_option("--n", gen_n, "Number of charts")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Corpus seed");
  gen->add_option("--out-dir", gen_out, "Output directory")->required();
  gen->add_option("--config", gen_config, "Generator config (JSON)");

  std::string score_preds, score_gt, score_out;
  auto* score = app.add_subcommand("score", "Score predictions against a dataset manifest");
  score->add_option("--preds", score_preds, "Predictions JSONL with id and raw")->required();
  score->add_option("--gt", score_gt, "Dataset manifest JSONL")->required();
  score->add_option("--out", score_out, "Report JSON")->required();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train the parser");
  train_cmd->add_option("--stage", ta.stage, "1, 2, 3 or all")
      ->check(CLI::IsMember({"1", "2", "3", "all", "S1", "S2", "S3"}));
  train_cmd->add_option("--data", ta.data, "Corpus directory written by gen")->required();
  train_cmd->add_option("--config", ta.config, "Training config (JSON)");
  train_cmd->add_option("--seed", ta.seed, "Initialization and shuffling seed");
  train_cmd->add_option("--out", ta.out, "Output checkpoint")->required();
  train_cmd->add_option("--init", ta.init, "Start from this checkpoint");
  train_cmd->add_option("--log", ta.log, "CSV metrics log (default <out>.csv)");
  train_cmd->add_flag("--quiet", ta.quiet, "No progress output");

  std::string ckpt, data, split = "test", out;
  int max_new_tokens = 700;
  auto* infer = app.add_subcommand("infer", "Run a checkpoint over a dataset split");
  infer->add_option("--ckpt", ckpt, "Checkpoint")->required();
  infer->add_option("--data", data, "Corpus directory")->required();
  infer->add_option("--split", split, "Split manifest name (train, val, test, dataset)");
  infer->add_option("--out", out, "Predictions JSONL")->required();
  infer->add_option("--max-new-tokens", max_new_tokens, "Generation limit")->check(CLI::PositiveNumber);

  std::string filter_preds, filter_out, filter_rejected;
  double delta = 0.1;
  auto* filter = app.add_subcommand("filter", "Keep predictions whose self-consistency distance is within delta");
  filter->add_option("--preds", filter_preds, "Predictions JSONL from infer")->required();
  filter->add_option("--delta", delta, "Distance threshold")->check(CLI::Range(0.0, 1.0));
  filter->add_option("--out", filter_out, "Accepted predictions")->required();
  filter->add_option("--rejected", filter_rejected, "Rejected predictions");

  std::string exp_preds;
  auto* experiment = app.add_subcommand("experiment", "Compare raw and purified scores");
  experiment->add_option("--ckpt", ckpt, "Checkpoint");
  experiment->add_option("--data", data, "Corpus directory")->required();
  experiment->add_option("--split", split, "Split manifest name");
  experiment->add_option("--delta", delta, "Distance threshold")->check(CLI::Range(0.0, 1.0));
  experiment->add_option("--preds", exp_preds, "Reuse predictions instead of running the checkpoint");
  experiment->add_option("--max-new-tokens", max_new_tokens, "Generation limit")->check(CLI::PositiveNumber);

  std::vector<std::string> ablation_ckpts;
  auto* ablation = app.add_subcommand("ablation", "Score several checkpoints side by side");
  ablation->add_option("--ckpt", ablation_ckpts, "Checkpoints (first is the baseline)")->required()->expected(2, -1);
  ablation->add_option("--data", data, "Corpus directory")->required();
  ablation->add_option("--split", split, "Split manifest name");
  ablation->add_option("--max-new-tokens", max_new_tokens, "Generation limit")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return run_gen(gen_n, gen_seed, gen_out, gen_config);
    if (*score) return run_score(score_preds, score_gt, score_out);
    if (*train_cmd) return run_train(ta);
    if (*infer) return run_infer(ckpt, data, split, out, max_new_tokens);
    if (*filter) return run_filter(filter_preds, delta, filter_out, filter_rejected);
    if (*experiment) {
      if (ckpt.empty() && exp_preds.empty()) throw std::invalid_argument("experiment needs --ckpt or --preds");
      return run_experiment(ckpt, data, split, delta, max_new_tokens, exp_preds);
    }
    if (*ablation) return run_ablation(ablation_ckpts, data, split, max_new_tokens);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
