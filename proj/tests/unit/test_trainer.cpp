#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "chartex/chartgen/generate.h"
#include "chartex/tinychart/checkpoint.h"
#include "chartex/trainer.h"
#include "support/oracles.h"

using namespace chartex;
using namespace chartex::train;
using tiny::ParamGroup;

namespace {

tiny::ModelConfig tiny_model() {
  tiny::ModelConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.image_size = 32;
  c.patch_size = 16;
  c.max_seq = 512;
  c.derive();
  return c;
}

gen::GeneratorConfig toy_generator() {
  auto g = gen::parse_generator_config(R"({
    "type_mix": {"SingleColumn": 0.4, "MultiColumn": 0.3, "pie": 0.3},
    "rows": [2, 4], "legends": [2, 2],
    "values": {"kind": "IntegerRange", "low": 1, "high": 99},
    "title_words": [1, 1], "source_prob": 0.0, "axis_label_prob": 0.0,
    "key_max_words": 1,
    "canvas": [128, 128]})");
  return g;
}

const std::filesystem::path& corpus_dir(std::size_t n) {
  static std::map<std::size_t, std::filesystem::path> dirs;
  auto it = dirs.find(n);
  if (it == dirs.end()) {
    const auto dir = oracle::temp_dir("trainer_" + std::to_string(n));
    gen::generate_corpus(n, 99, toy_generator(), dir);
    it = dirs.emplace(n, dir).first;
  }
  return it->second;
}

TrainingSet small_set(std::size_t n, const tiny::ModelConfig& cfg) {
  auto set = load_training_set(corpus_dir(40), "train", cfg);
  if (set.examples.size() > n) set.examples.resize(n);
  return set;
}

StagePlan quick(Stage s, int epochs = 1, int batch = 4, double lr = 1e-3) {
  auto p = default_plan(s);
  p.epochs = epochs;
  p.batch_size = batch;
  p.lr = lr;
  return p;
}

std::vector<std::vector<float>> snapshot(const tiny::Checkpoint& c, ParamGroup g) {
  std::vector<std::vector<float>> out;
  c.params.visit([&](const std::string&, ParamGroup grp, const tiny::Mat<float>& m, bool) {
    if (grp == g) out.emplace_back(m.data(), m.data() + m.size());
  });
  return out;
}

double mean_text(const std::vector<StepRecord>& recs, std::size_t from, std::size_t to) {
  double s = 0;
  for (std::size_t i = from; i < to; ++i) s += recs[i].l_text;
  return s / static_cast<double>(to - from);
}

}  // namespace

TEST_CASE("stage plans") {
  const auto s1 = default_plan(Stage::S1);
  const auto s2 = default_plan(Stage::S2);
  const auto s3 = default_plan(Stage::S3);
  CHECK(s1.trainable == tiny::GroupSet{}.with(ParamGroup::encoder).with(ParamGroup::decoder));
  CHECK(s1.loss == tiny::LossKind::text_only);
  CHECK(s2.trainable == tiny::GroupSet{}.with(ParamGroup::decoder).with(ParamGroup::aux));
  CHECK(s2.loss == tiny::LossKind::text_plus_num);
  CHECK(s3.trainable == tiny::GroupSet::all());
  CHECK(s3.loss == tiny::LossKind::text_plus_num);
  CHECK(s1.epochs == 3);
  CHECK(s1.lr == 3e-4);
  CHECK(s2.lr == 1e-4);
  CHECK(s1.batch_size == 8);
  auto bad = s2;
  bad.trainable = tiny::GroupSet::all();
  CHECK_THROWS(bad.validate());
  bad = s1;
  bad.loss = tiny::LossKind::text_plus_num;
  CHECK_THROWS(bad.validate());
  CHECK(stage_from_string("2") == Stage::S2);
  CHECK(stage_from_string("S3") == Stage::S3);
  CHECK_THROWS(stage_from_string("S4"));
}

TEST_CASE("learning-rate schedule") {
  const auto p = default_plan(Stage::S1);
  const std::size_t total = 1000;
  double prev = 0;
  for (std::size_t s = 0; s < 50; ++s) {
    const double lr = learning_rate(p, s, total);
    CHECK(lr > prev);
    prev = lr;
  }
  CHECK(learning_rate(p, 50, total) == doctest::Approx(p.lr));
  for (std::size_t s = 51; s < 800; ++s) CHECK(learning_rate(p, s, total) <= learning_rate(p, s - 1, total));
  for (std::size_t s = 800; s < total; ++s) CHECK(learning_rate(p, s, total) == doctest::Approx(p.lr * 0.1));
}

TEST_CASE("training config parsing") {
  const auto c = parse_train_config(R"({"model": {"d_model": 32, "n_heads": 2},
      "stages": {"S1": {"epochs": 5, "lr": 0.001}, "S3": {"batch_size": 4}}, "max_new_tokens": 300})");
  CHECK(c.model.d_model == 32);
  CHECK(c.model.aux_hidden == 64);
  CHECK(c.plan(Stage::S1).epochs == 5);
  CHECK(c.plan(Stage::S1).lr == 0.001);
  CHECK(c.plan(Stage::S2).epochs == 1);
  CHECK(c.plan(Stage::S3).batch_size == 4);
  CHECK(c.max_new_tokens == 300);
  CHECK_THROWS(parse_train_config(R"({"stages": {"S1": {"trainable": 1}}})"));
  CHECK_THROWS(parse_train_config(R"({"unknown": 1})"));
  CHECK_THROWS(parse_train_config(R"({"stages": {"S1": {"lr": -1}}})"));
}

TEST_CASE("training set loading") {
  const auto cfg = tiny_model();
  const auto set = load_training_set(corpus_dir(40), "train", cfg);
  CHECK(set.examples.size() + set.skipped_too_long == 36);
  CHECK(set.config == cfg);
  for (const auto& ex : set.examples) {
    CHECK(ex.patches.size() == static_cast<std::size_t>(cfg.n_image_tokens * cfg.patch_dim()));
    CHECK(ex.numbers.valid_count() > 0);
    CHECK(ex.seq.marker_index() >= 0);
  }
  CHECK_THROWS(load_training_set(corpus_dir(40), "nope", cfg));
}

TEST_CASE("frozen groups stay bit-identical") {
  const auto cfg = tiny_model();
  const auto data = small_set(12, cfg);
  auto ckpt = tiny::new_checkpoint(cfg, 5);
  const auto aux_before = snapshot(ckpt, ParamGroup::aux);
  run_stage(quick(Stage::S1), data, ckpt);
  CHECK(snapshot(ckpt, ParamGroup::aux) == aux_before);
  CHECK_FALSE(ckpt.aux_initialized);

  const auto enc_before = snapshot(ckpt, ParamGroup::encoder);
  const auto dec_before = snapshot(ckpt, ParamGroup::decoder);
  run_stage(quick(Stage::S2), data, ckpt);
  CHECK(ckpt.aux_initialized);
  CHECK(snapshot(ckpt, ParamGroup::encoder) == enc_before);
  CHECK(snapshot(ckpt, ParamGroup::decoder) != dec_before);
  CHECK(snapshot(ckpt, ParamGroup::aux) != aux_before);

  run_stage(quick(Stage::S3), data, ckpt);
  CHECK(snapshot(ckpt, ParamGroup::encoder) != enc_before);
  CHECK(ckpt.completed_stages == std::vector<std::string>{"S1", "S2", "S3"});
}

TEST_CASE("logged losses are additive and survive the CSV round trip") {
  const auto cfg = tiny_model();
  const auto data = small_set(12, cfg);
  auto ckpt = tiny::new_checkpoint(cfg, 6);
  auto recs = run_stage(quick(Stage::S1), data, ckpt);
  const auto s2 = run_stage(quick(Stage::S2, 2), data, ckpt);
  recs.insert(recs.end(), s2.begin(), s2.end());
  std::stringstream csv;
  write_csv_header(csv);
  for (const auto& r : recs) write_csv_row(csv, r);
  std::string line;
  std::getline(csv, line);
  CHECK(line == "step,stage,epoch,l_text,l_num,total,lr");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    std::stringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() == 7);
    const double text = std::stod(cells[3]), num = std::stod(cells[4]), total = std::stod(cells[5]);
    CHECK(total == text + num);
    if (cells[1] == "S1") CHECK(num == 0.0);
    if (cells[1] == "S2") CHECK(num > 0.0);
    ++rows;
  }
  CHECK(rows == recs.size());
  CHECK(recs.size() == 3 + 6);
}

TEST_CASE("step-zero loss of an untrained model") {
  const auto cfg = tiny_model();
  const auto data = small_set(16, cfg);
  const auto n = static_cast<int>(data.examples.size());

  // the same aux initialization, without any update
  auto probe = tiny::new_checkpoint(cfg, 8);
  auto idle = quick(Stage::S2, 0, n);
  run_stage(idle, data, probe);
  REQUIRE(probe.aux_initialized);
  const auto p = probe.params.cast<double>();
  double text = 0, num = 0;
  for (const auto& ex : data.examples) {
    const auto patches = tiny::patch_matrix<double>(ex.patches, cfg);
    const auto l = tiny::loss_and_gradients(p, cfg, ex.seq, patches, &ex.numbers, tiny::LossKind::text_plus_num);
    text += l.text / n;
    num += l.num / n;
  }

  auto ckpt = tiny::new_checkpoint(cfg, 8);
  const auto recs = run_stage(quick(Stage::S2, 1, n), data, ckpt);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].step == 0);
  CHECK(std::abs(recs[0].l_text - std::log(double(tiny::kVocabSize))) < 0.1);
  CHECK(recs[0].l_num == doctest::Approx(num).epsilon(1e-4));
  CHECK(recs[0].l_text == doctest::Approx(text).epsilon(1e-4));
  CHECK(recs[0].total == recs[0].l_text + recs[0].l_num);
}

TEST_CASE("training is deterministic and resumable") {
  const auto cfg = tiny_model();
  const auto data = small_set(10, cfg);
  const std::vector<StagePlan> plans{quick(Stage::S1, 2, 3), quick(Stage::S2, 1, 3), quick(Stage::S3, 1, 3)};

  auto a = tiny::new_checkpoint(cfg, 11);
  auto b = tiny::new_checkpoint(cfg, 11);
  const auto ra = run_schedule(plans, data, a);
  const auto rb = run_schedule(plans, data, b);
  REQUIRE(ra.size() == rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    CHECK(ra[i].total == rb[i].total);
    CHECK(ra[i].lr == rb[i].lr);
  }
  CHECK(tiny::encode_checkpoint(a) == tiny::encode_checkpoint(b));

  const auto dir = oracle::temp_dir("resume");
  auto c = tiny::new_checkpoint(cfg, 11);
  ScheduleOptions opts;
  opts.stage_prefix = (dir / "run").string();
  run_schedule({plans[0]}, data, c, opts);
  auto resumed = tiny::load_checkpoint((dir / "run.S1.ckpt").string());
  CHECK(resumed.completed_stages == std::vector<std::string>{"S1"});
  const auto rest = run_schedule(plans, data, resumed);
  CHECK(rest.size() + 2 * 4 == ra.size());
  CHECK(tiny::encode_checkpoint(resumed) == tiny::encode_checkpoint(a));

  auto other = tiny::new_checkpoint(cfg, 12);
  run_schedule(plans, data, other);
  CHECK(tiny::encode_checkpoint(other) != tiny::encode_checkpoint(a));
}

TEST_CASE("marker placement variants train") {
  for (auto pos : {tiny::AuxPosition::behind, tiny::AuxPosition::none}) {
    auto cfg = tiny_model();
    cfg.aux_position = pos;
    const auto data = small_set(8, cfg);
    auto ckpt = tiny::new_checkpoint(cfg, 13);
    const auto recs = run_schedule({quick(Stage::S1), quick(Stage::S2), quick(Stage::S3)}, data, ckpt);
    CHECK(recs.size() == 6);
    for (const auto& r : recs) {
      CHECK(std::isfinite(r.total));
      if (pos == tiny::AuxPosition::none) CHECK(r.l_num == 0.0);
    }
  }
}

TEST_CASE("training errors") {
  const auto cfg = tiny_model();
  TrainingSet empty;
  empty.config = cfg;
  auto ckpt = tiny::new_checkpoint(cfg, 1);
  CHECK_THROWS_AS(run_stage(quick(Stage::S1), empty, ckpt), DatasetEmpty);

  auto other = cfg;
  other.d_model = 32;
  other.derive();
  auto mismatched = tiny::new_checkpoint(other, 1);
  CHECK_THROWS_AS(run_stage(quick(Stage::S1), small_set(4, cfg), mismatched), CheckpointIncompatible);
}

TEST_CASE("S1 converges on a small corpus") {
  tiny::ModelConfig cfg;
  cfg.d_model = 64;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.image_size = 32;
  cfg.patch_size = 16;
  cfg.derive();
  auto data = load_training_set(corpus_dir(500), "train", cfg);
  REQUIRE(data.examples.size() >= 440);
  auto ckpt = tiny::new_checkpoint(cfg, 21);
  auto plan = default_plan(Stage::S1);
  plan.lr = 1e-3;
  const auto recs = run_stage(plan, data, ckpt);
  const std::size_t per_epoch = (data.examples.size() + 7) / 8;
  REQUIRE(recs.size() == 3 * per_epoch);
  const double initial = recs[0].l_text;
  const double final_loss = mean_text(recs, recs.size() - 10, recs.size());
  MESSAGE("initial " << initial << ", final " << final_loss);
  CHECK(final_loss < 0.25 * initial);
}
