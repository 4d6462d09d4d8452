#include "chartex/trainer.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "chartex/chartgen/raster.h"
#include "chartex/chartgen/rng.h"
#include "chartex/tinychart/vision.h"

namespace chartex::train {

using tiny::GroupSet;
using tiny::LossKind;
using tiny::Mat;
using tiny::ParamGroup;
using tiny::Params;

const char* to_string(Stage s) {
  switch (s) {
    case Stage::S1: return "S1";
    case Stage::S2: return "S2";
    case Stage::S3: return "S3";
  }
  return "?";
}

Stage stage_from_string(const std::string& s) {
  if (s == "S1" || s == "s1" || s == "1") return Stage::S1;
  if (s == "S2" || s == "s2" || s == "2") return Stage::S2;
  if (s == "S3" || s == "s3" || s == "3") return Stage::S3;
  throw std::invalid_argument("unknown stage '" + s + "'");
}

StagePlan default_plan(Stage s) {
  StagePlan p;
  p.stage = s;
  switch (s) {
    case Stage::S1:
      p.trainable = GroupSet{}.with(ParamGroup::encoder).with(ParamGroup::decoder);
      p.loss = LossKind::text_only;
      p.epochs = 3;
      p.lr = 3e-4;
      break;
    case Stage::S2:
      p.trainable = GroupSet{}.with(ParamGroup::decoder).with(ParamGroup::aux);
      p.loss = LossKind::text_plus_num;
      p.epochs = 1;
      p.lr = 1e-4;
      break;
    case Stage::S3:
      p.trainable = GroupSet::all();
      p.loss = LossKind::text_plus_num;
      p.epochs = 1;
      p.lr = 1e-4;
      break;
  }
  return p;
}

void StagePlan::validate() const {
  const StagePlan ref = default_plan(stage);
  if (!(trainable == ref.trainable) || loss != ref.loss) {
    throw std::invalid_argument(std::string("stage ") + to_string(stage) + " has the wrong trainable set or loss");
  }
  if (epochs < 0 || batch_size <= 0 || !(lr > 0) || weight_decay < 0 || !(grad_clip > 0)) {
    throw std::invalid_argument("stage hyperparameters out of range");
  }
  if (warmup_frac < 0 || warmup_frac >= 1 || decay_end <= 0 || decay_end > 1 || final_lr_ratio < 0 ||
      final_lr_ratio > 1) {
    throw std::invalid_argument("learning-rate schedule out of range");
  }
}

double learning_rate(const StagePlan& plan, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return plan.lr;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  const double floor = plan.lr * plan.final_lr_ratio;
  if (t < plan.warmup_frac) return plan.lr * (t + 1.0 / total_steps) / (plan.warmup_frac + 1.0 / total_steps);
  if (t >= plan.decay_end) return floor;
  const double span = plan.decay_end - plan.warmup_frac;
  const double progress = span > 0 ? (t - plan.warmup_frac) / span : 1.0;
  return floor + (plan.lr - floor) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

const StagePlan& TrainConfig::plan(Stage s) const {
  for (const auto& p : plans) {
    if (p.stage == s) return p;
  }
  throw std::invalid_argument(std::string("no plan for stage ") + to_string(s));
}

TrainConfig parse_train_config(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw std::invalid_argument("training config is not a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "model") {
        c.model = tiny::ModelConfig::from_json(v.dump());
      } else if (key == "max_new_tokens") {
        c.max_new_tokens = v.get<int>();
      } else if (key == "stages") {
        for (const auto& [name, sv] : v.items()) {
          StagePlan& p = c.plans[static_cast<std::size_t>(stage_from_string(name))];
          for (const auto& [k, x] : sv.items()) {
            if (k == "epochs") p.epochs = x.get<int>();
            else if (k == "lr") p.lr = x.get<double>();
            else if (k == "batch_size") p.batch_size = x.get<int>();
            else if (k == "weight_decay") p.weight_decay = x.get<double>();
            else if (k == "grad_clip") p.grad_clip = x.get<double>();
            else if (k == "beta1") p.beta1 = x.get<double>();
            else if (k == "beta2") p.beta2 = x.get<double>();
            else if (k == "warmup_frac") p.warmup_frac = x.get<double>();
            else if (k == "decay_end") p.decay_end = x.get<double>();
            else if (k == "final_lr_ratio") p.final_lr_ratio = x.get<double>();
            else throw std::invalid_argument("unknown stage key '" + k + "'");
          }
        }
      } else {
        throw std::invalid_argument("unknown training config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("training config: ") + e.what());
  }
  for (const auto& p : c.plans) p.validate();
  if (c.max_new_tokens <= 0) throw std::invalid_argument("max_new_tokens must be positive");
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_train_config(ss.str());
}

Example make_example(const std::string& id, const gen::Image& img, const ir::ChartDict& gt,
                     const tiny::ModelConfig& cfg) {
  Example ex;
  ex.id = id;
  ex.seq = tiny::encode_example(ir::serialize(gt), cfg);
  ex.patches = tiny::prepare_image(img, cfg);
  ex.numbers = ir::extract_value_vector(gt);
  return ex;
}

TrainingSet load_training_set(const std::filesystem::path& data_dir, const std::string& split,
                              const tiny::ModelConfig& cfg) {
  TrainingSet set;
  set.config = cfg;
  const auto records = ir::read_dataset((data_dir / (split + ".jsonl")).string());
  for (const auto& r : records) {
    try {
      set.examples.push_back(make_example(r.image, gen::read_png((data_dir / r.image).string()), r.gt, cfg));
    } catch (const tiny::SequenceTooLong&) {
      ++set.skipped_too_long;
    }
  }
  return set;
}

void write_csv_header(std::ostream& os) { os << "step,stage,epoch,l_text,l_num,total,lr\n"; }

void write_csv_row(std::ostream& os, const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%s,%d,%.17g,%.17g,%.17g,%.17g\n", r.step, to_string(r.stage), r.epoch,
                r.l_text, r.l_num, r.total, r.lr);
  os << buf;
}

namespace {

struct ParamRef {
  Mat<float>* value;
  Mat<float>* grad;
  bool decays;
};

class AdamW {
 public:
  AdamW(const StagePlan& plan, std::vector<ParamRef> params) : plan_(plan), params_(std::move(params)) {
    for (const auto& p : params_) {
      m_.push_back(Mat<float>::Zero(p.value->rows(), p.value->cols()));
      v_.push_back(Mat<float>::Zero(p.value->rows(), p.value->cols()));
    }
  }

  double clip_gradients() {
    double sq = 0.0;
    for (const auto& p : params_) sq += static_cast<double>(p.grad->squaredNorm());
    const double norm = std::sqrt(sq);
    if (norm > plan_.grad_clip) {
      const auto s = static_cast<float>(plan_.grad_clip / norm);
      for (auto& p : params_) *p.grad *= s;
    }
    return norm;
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(plan_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(plan_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<float>(plan_.beta1);
    const auto b2 = static_cast<float>(plan_.beta2);
    const auto step_size = static_cast<float>(lr / c1);
    const auto inv_c2 = static_cast<float>(1.0 / c2);
    const auto eps = static_cast<float>(plan_.adam_eps);
    const auto decay = static_cast<float>(1.0 - lr * plan_.weight_decay);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      m_[i] = b1 * m_[i] + (1.0f - b1) * *p.grad;
      v_[i] = b2 * v_[i] + (1.0f - b2) * p.grad->cwiseAbs2();
      if (p.decays) *p.value *= decay;
      p.value->array() -= step_size * m_[i].array() / ((v_[i].array() * inv_c2).sqrt() + eps);
    }
  }

 private:
  const StagePlan& plan_;
  std::vector<ParamRef> params_;
  std::vector<Mat<float>> m_, v_;
  std::uint64_t t_ = 0;
};

bool stage_done(const tiny::Checkpoint& ckpt, Stage s) {
  return std::find(ckpt.completed_stages.begin(), ckpt.completed_stages.end(), to_string(s)) !=
         ckpt.completed_stages.end();
}

}  // namespace

std::vector<StepRecord> run_stage(const StagePlan& plan, const TrainingSet& data, tiny::Checkpoint& ckpt,
                                  const StepCallback& on_step) {
  plan.validate();
  if (data.examples.empty()) throw DatasetEmpty("training set has no usable examples");
  if (!(data.config == ckpt.config)) {
    throw CheckpointIncompatible("training data was prepared for a different model config than the checkpoint");
  }
  const tiny::ModelConfig& cfg = ckpt.config;
  // Without a marker there is no auxiliary head to supervise.
  const LossKind kind = cfg.aux_position == tiny::AuxPosition::none ? LossKind::text_only : plan.loss;
  if (plan.trainable.has(ParamGroup::aux) && !ckpt.aux_initialized) {
    tiny::init_params(ckpt.params, cfg, ckpt.seed, GroupSet{}.with(ParamGroup::aux));
    ckpt.aux_initialized = true;
  }
  if (kind == LossKind::text_plus_num && !ckpt.aux_initialized) {
    throw CheckpointIncompatible("number loss requested before the auxiliary decoder exists");
  }

  Params<float> grads = Params<float>::zeros(cfg);
  std::vector<ParamRef> refs;
  {
    std::vector<Mat<float>*> gs;
    grads.visit([&](const std::string&, ParamGroup, Mat<float>& m, bool) { gs.push_back(&m); });
    std::size_t i = 0;
    ckpt.params.visit([&](const std::string&, ParamGroup g, Mat<float>& m, bool decays) {
      if (plan.trainable.has(g)) refs.push_back({&m, gs[i], decays});
      ++i;
    });
  }
  AdamW opt(plan, refs);

  gen::Rng rng(ckpt.seed);
  if (!ckpt.rng_state.empty()) rng.set_state(ckpt.rng_state);

  const std::size_t n = data.examples.size();
  const std::size_t batch = static_cast<std::size_t>(plan.batch_size);
  const std::size_t per_epoch = (n + batch - 1) / batch;
  const std::size_t total = per_epoch * static_cast<std::size_t>(plan.epochs);
  std::vector<std::size_t> order(n);
  std::vector<StepRecord> log;
  log.reserve(total);
  std::size_t step = 0;
  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      const float weight = 1.0f / static_cast<float>(end - start);
      for (auto& r : refs) r.grad->setZero();
      double l_text = 0.0;
      double l_num = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const Example& ex = data.examples[order[k]];
        const Mat<float> patches = tiny::patch_matrix<float>(ex.patches, cfg);
        const auto l = tiny::loss_and_gradients<float>(ckpt.params, cfg, ex.seq, patches, &ex.numbers, kind, weight,
                                                       &grads, plan.trainable);
        l_text += l.text;
        l_num += l.num;
      }
      opt.clip_gradients();
      const double lr = learning_rate(plan, step, total);
      opt.step(lr);

      StepRecord rec;
      rec.step = step;
      rec.stage = plan.stage;
      rec.epoch = epoch;
      rec.l_text = l_text / static_cast<double>(end - start);
      rec.l_num = l_num / static_cast<double>(end - start);
      rec.total = rec.l_text + rec.l_num;
      rec.lr = lr;
      log.push_back(rec);
      if (on_step) on_step(rec);
      ++step;
    }
  }
  ckpt.rng_state = rng.state();
  ckpt.completed_stages.push_back(to_string(plan.stage));
  return log;
}

std::vector<StepRecord> run_schedule(const std::vector<StagePlan>& plans, const TrainingSet& data,
                                     tiny::Checkpoint& ckpt, const ScheduleOptions& opts) {
  std::vector<StepRecord> all;
  for (const auto& plan : plans) {
    if (stage_done(ckpt, plan.stage)) continue;
    auto log = run_stage(plan, data, ckpt, opts.on_step);
    all.insert(all.end(), log.begin(), log.end());
    if (!opts.stage_prefix.empty()) {
      tiny::save_checkpoint(opts.stage_prefix + "." + to_string(plan.stage) + ".ckpt", ckpt);
    }
  }
  return all;
}

}  // namespace chartex::train
