#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "chartex/chartgen/rng.h"
#include "chartex/tinychart/checkpoint.h"
#include "chartex/tinychart/model.h"
#include "chartex/tinychart/tokenizer.h"
#include "chartex/tinychart/vision.h"
#include "support/oracles.h"

using namespace chartex;
using namespace chartex::tiny;

namespace {

ModelConfig small_config(AuxPosition pos = AuxPosition::front) {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.image_size = 32;
  c.patch_size = 16;
  c.max_seq = 256;
  c.aux_position = pos;
  c.derive();
  return c;
}

ModelConfig two_layer_config() {
  ModelConfig c = small_config();
  c.d_model = 24;
  c.n_layers = 2;
  c.n_heads = 3;
  c.derive();
  return c;
}

template <typename T>
Mat<T> random_patches(const ModelConfig& cfg, std::uint64_t seed) {
  gen::Rng r(seed);
  std::vector<float> px(static_cast<std::size_t>(cfg.n_image_tokens * cfg.patch_dim()));
  for (auto& v : px) v = static_cast<float>(r.uniform());
  return patch_matrix<T>(px, cfg);
}

template <typename T>
void jitter(Params<T>& p, std::uint64_t seed, double scale) {
  gen::Rng r(seed);
  p.visit([&](const std::string&, ParamGroup, Mat<T>& m, bool) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += static_cast<T>(scale * (r.uniform() - 0.5));
  });
}

std::vector<Mat<double>*> tensors(Params<double>& p) {
  std::vector<Mat<double>*> out;
  p.visit([&](const std::string&, ParamGroup, Mat<double>& m, bool) { out.push_back(&m); });
  return out;
}

ir::NumericVector numbers_of(const std::string& target) {
  return ir::extract_value_vector(ir::parse_raw_output(target));
}

const std::string kTarget = R"({"title": "Rain", "source": "", "x_axis": "", "y_axis": "", "values": {"a": 1.5, "b": 4.0}})";

double hand_ce(const std::vector<double>& logits, int target) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double s = 0.0;
  for (double v : logits) s += std::exp(v - m);
  return -(logits[static_cast<std::size_t>(target)] - m - std::log(s));
}

}  // namespace

TEST_CASE("model config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.n_image_tokens == 64);
  CHECK(c.aux_hidden == 2 * c.d_model);
  CHECK(ModelConfig::from_json(c.to_json()) == c);
  auto bad = c;
  bad.patch_size = 12;
  CHECK_THROWS_AS(bad.validate(), InvalidModelConfig);
  bad = c;
  bad.aux_dim = 128;
  CHECK_THROWS_AS(bad.validate(), InvalidModelConfig);
  bad = c;
  bad.n_image_tokens = 10;
  CHECK_THROWS_AS(bad.validate(), InvalidModelConfig);
  CHECK_THROWS(ModelConfig::from_json(R"({"bogus": 1})"));
  const auto derived = ModelConfig::from_json(R"({"image_size": 256, "d_model": 32, "n_heads": 2})");
  CHECK(derived.n_image_tokens == 256);
  CHECK(derived.aux_hidden == 64);
}

TEST_CASE("tokenizer") {
  const ModelConfig cfg;
  SUBCASE("template round trip") {
    const std::string target = "{'a': 1.5, 'b<c': 'x'}";
    const auto seq = tokenize(build_prompt(target), cfg);
    CHECK(detokenize(seq) == target);
    CHECK(seq.loss_count() == target.size() + 1);
    CHECK(seq.image_token_count() == static_cast<std::size_t>(cfg.n_image_tokens));
    const int m = seq.marker_index();
    REQUIRE(m >= 0);
    CHECK(seq.segments[static_cast<std::size_t>(m) + 1] == Segment::target);
    CHECK(seq.ids.back() == kEos);
    CHECK(seq.loss_mask.back());
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const bool supervised = seq.segments[i] == Segment::target || seq.segments[i] == Segment::eos;
      CHECK(seq.loss_mask[i] == supervised);
    }
  }
  SUBCASE("structured encoding agrees with template parsing") {
    const std::string target = "{'k': 2.0}";
    const auto a = tokenize(build_prompt(target), cfg);
    const auto b = encode_example(target, cfg);
    CHECK(a.ids == b.ids);
    CHECK(a.segments == b.segments);
    CHECK(a.loss_mask == b.loss_mask);
  }
  SUBCASE("special spellings inside a target stay bytes when encoded structurally") {
    const auto seq = encode_example("x</s>y", cfg);
    CHECK(detokenize(seq) == "x</s>y");
    CHECK(std::count(seq.ids.begin(), seq.ids.end(), kEos) == 1);
  }
  SUBCASE("prompt only") {
    const auto seq = prompt_sequence(cfg);
    CHECK(seq.loss_count() == 0);
    CHECK(seq.marker_index() == -1);
    const auto text = tokenize(build_prompt("", AuxPosition::front, false), cfg);
    CHECK(text.ids == seq.ids);
  }
  SUBCASE("marker placement variants") {
    auto behind = cfg;
    behind.aux_position = AuxPosition::behind;
    const auto b = encode_example("{'a': 1.0}", behind);
    const int m = b.marker_index();
    REQUIRE(m >= 0);
    CHECK(b.ids[static_cast<std::size_t>(m) + 1] == kEos);
    CHECK(b.loss_mask[static_cast<std::size_t>(m)]);
    CHECK(detokenize(b) == "{'a': 1.0}");
    auto none = cfg;
    none.aux_position = AuxPosition::none;
    const auto n = encode_example("{'a': 1.0}", none);
    CHECK(n.marker_index() == -1);
    CHECK(n.loss_count() == std::string("{'a': 1.0}").size() + 1);
  }
  SUBCASE("too long") {
    CHECK_THROWS_AS(encode_example(std::string(static_cast<std::size_t>(cfg.max_seq), 'x'), cfg), SequenceTooLong);
  }
  CHECK(decode_ids({'a', kChartMarker, 'b', kEos}) == "a<Chart>b</s>");
}

TEST_CASE("image preprocessing") {
  const ModelConfig cfg;
  gen::Image img(300, 200, {255, 255, 255});
  gen::fill_rect(img, 0, 0, 150, 200, {0, 0, 0});
  const auto px = resize_bilinear(img, 128);
  CHECK(px.size == 128);
  CHECK(px.rgb.size() == 128u * 128u * 3u);
  CHECK(px.rgb[0] == 0);
  CHECK(px.rgb[(127 * 128 + 127) * 3] == 255);
  const auto patches = prepare_image(img, cfg);
  CHECK(patches.size() == static_cast<std::size_t>(cfg.n_image_tokens * cfg.patch_dim()));
  for (float v : patches) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(prepare_image(img, cfg) == patches);
}

TEST_CASE("encode_image") {
  const ModelConfig cfg;
  const auto p = init_params<float>(cfg, 1);
  const auto black = patch_matrix<float>(prepare_image(gen::Image(64, 64, {0, 0, 0}), cfg), cfg);
  const auto white = patch_matrix<float>(prepare_image(gen::Image(64, 64, {255, 255, 255}), cfg), cfg);
  const auto vb = encode_image(p, black);
  const auto vw = encode_image(p, white);
  CHECK(vb.rows() == cfg.n_image_tokens);
  CHECK(vb.cols() == cfg.d_model);
  CHECK((vb - vw).cwiseAbs().maxCoeff() > 1e-3f);
  CHECK(encode_image(p, black) == vb);
  CHECK(vb.allFinite());
}

TEST_CASE("forward shapes and causality") {
  const auto cfg = two_layer_config();
  auto p = init_params<double>(cfg, 3);
  jitter(p, 4, 0.05);
  const auto v = encode_image(p, random_patches<double>(cfg, 5));
  const auto seq = encode_example(kTarget, cfg);
  const auto out = forward(p, cfg, seq, v);
  CHECK(out.logits.rows() == static_cast<Eigen::Index>(seq.size()));
  CHECK(out.logits.cols() == cfg.vocab_size);
  REQUIRE(out.aux.has_value());
  CHECK(out.aux->prediction.size() == 256);

  gen::Rng r(6);
  for (int trial = 0; trial < 6; ++trial) {
    const auto k = static_cast<std::size_t>(r.uniform_int(1, static_cast<std::int64_t>(seq.size()) - 1));
    auto mutated = seq;
    for (std::size_t i = k; i < seq.size(); ++i) {
      if (mutated.segments[i] == Segment::image) continue;
      mutated.ids[i] = static_cast<int>(r.uniform_int(0, 255));
    }
    const auto out2 = forward(p, cfg, mutated, v);
    for (std::size_t i = 0; i < k; ++i)
      REQUIRE(out2.logits.row(static_cast<Eigen::Index>(i)) == out.logits.row(static_cast<Eigen::Index>(i)));
  }
}

TEST_CASE("marker hidden state ignores the target") {
  const auto cfg = two_layer_config();
  const auto p = init_params<double>(cfg, 8);
  const auto v = encode_image(p, random_patches<double>(cfg, 9));
  const auto seq = encode_example(kTarget, cfg);
  const auto a = forward(p, cfg, seq, v);
  REQUIRE(a.aux);
  gen::Rng r(10);
  for (int trial = 0; trial < 5; ++trial) {
    auto mutated = seq;
    for (std::size_t i = 0; i < seq.size(); ++i)
      if (seq.segments[i] == Segment::target) mutated.ids[i] = static_cast<int>(r.uniform_int(0, 255));
    const auto b = forward(p, cfg, mutated, v);
    REQUIRE(b.aux);
    CHECK(a.aux->hidden == b.aux->hidden);
    CHECK(a.aux->prediction == b.aux->prediction);
  }
  // a target of another length changes matrix shapes, so only rounding may differ
  const auto c = forward(p, cfg, encode_example("{}", cfg), v);
  REQUIRE(c.aux);
  CHECK((a.aux->hidden - c.aux->hidden).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("aux decoder") {
  const auto cfg = small_config();
  auto p = init_params<double>(cfg, 10);
  gen::Rng r(11);
  RowVec<double> h(cfg.d_model);
  for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = r.uniform(-1, 1);
  CHECK(aux_decode(p, h).size() == 256);

  auto z = p;
  z.aux_w1.setZero();
  z.aux_b1.setZero();
  z.aux_w2.setZero();
  z.aux_b2.setZero();
  z.aux_w3.setZero();
  z.aux_b3.setZero();
  CHECK(aux_decode(z, h).cwiseAbs().maxCoeff() == 0.0);

  // random small biases keep most ReLUs away from their kink
  for (auto* m : {&p.aux_b1, &p.aux_b2, &p.aux_b3})
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = 0.1 * (r.uniform() - 0.5);
  RowVec<double> d_pred(256);
  for (Eigen::Index i = 0; i < 256; ++i) d_pred(i) = r.uniform(-1, 1);
  auto grads = Params<double>::zeros(cfg);
  const auto dh = aux_backward(p, h, d_pred, grads);
  const double step = 1e-4;
  auto objective = [&](const Params<double>& q, const RowVec<double>& x) { return aux_decode(q, x).dot(d_pred); };
  double worst = 0.0;
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    auto hp = h, hm = h;
    hp(i) += step;
    hm(i) -= step;
    const double fd = (objective(p, hp) - objective(p, hm)) / (2 * step);
    worst = std::max(worst, std::abs(fd - dh(i)) / std::max(1e-8, std::abs(fd) + std::abs(dh(i))));
  }
  auto q = p;
  for (auto [m, g] : {std::pair{&q.aux_w1, &grads.aux_w1}, {&q.aux_w3, &grads.aux_w3}, {&q.aux_b2, &grads.aux_b2}}) {
    for (int t = 0; t < 10; ++t) {
      const auto idx = static_cast<Eigen::Index>(r.uniform_int(0, m->size() - 1));
      const double old = m->data()[idx];
      m->data()[idx] = old + step;
      const double lp = objective(q, h);
      m->data()[idx] = old - step;
      const double lm = objective(q, h);
      m->data()[idx] = old;
      const double fd = (lp - lm) / (2 * step);
      const double an = g->data()[idx];
      if (std::abs(fd) + std::abs(an) < 1e-10) continue;
      worst = std::max(worst, std::abs(fd - an) / (std::abs(fd) + std::abs(an)));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("text loss") {
  TokenSequence seq;
  seq.ids = {1, 3, 0};
  seq.segments = {Segment::prompt, Segment::target, Segment::eos};
  seq.loss_mask = {false, true, true};
  SUBCASE("uniform logits") {
    const Mat<double> logits = Mat<double>::Zero(3, kVocabSize);
    CHECK(text_loss(logits, seq) == doctest::Approx(std::log(double(kVocabSize))).epsilon(1e-12));
  }
  SUBCASE("confident correct logits") {
    Mat<double> logits = Mat<double>::Zero(3, kVocabSize);
    logits(0, 3) = 60.0;
    logits(1, 0) = 60.0;
    CHECK(text_loss(logits, seq) < 1e-20);
  }
  SUBCASE("hand-computed three token case") {
    Mat<double> logits(3, 4);
    logits << 0.5, -1.0, 2.0, 0.25,
              1.0, 0.0, -0.5, 3.0,
              9.0, 9.0, 9.0, 9.0;
    const double expect = (hand_ce({0.5, -1.0, 2.0, 0.25}, 3) + hand_ce({1.0, 0.0, -0.5, 3.0}, 0)) / 2.0;
    CHECK(text_loss(logits, seq) == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("empty mask") {
    seq.loss_mask = {false, false, false};
    CHECK_THROWS_AS(text_loss(Mat<double>::Zero(3, 4).eval(), seq), EmptyMask);
  }
}

TEST_CASE("number loss") {
  ir::NumericVector gt;
  gt.slots[0] = 0.0;
  gt.slots[1] = 1.0;
  gt.mask[0] = gt.mask[1] = true;
  RowVec<double> pred = RowVec<double>::Constant(256, 7.0);
  pred(0) = 0.5;
  pred(1) = 0.5;
  CHECK(number_loss(pred, gt) == doctest::Approx(0.5).epsilon(1e-15));
  pred(0) = 0.0;
  pred(1) = 1.0;
  CHECK(number_loss(pred, gt) == 0.0);

  gen::Rng r(12);
  pred(0) = 0.3;
  const double base = number_loss(pred, gt);
  for (int t = 0; t < 100; ++t) {
    auto q = pred;
    q(static_cast<Eigen::Index>(r.uniform_int(2, 255))) = r.uniform(-1e6, 1e6);
    REQUIRE(number_loss(q, gt) == base);
  }
  CHECK_THROWS_AS(number_loss(pred, ir::NumericVector{}), NoValidSlots);
}

TEST_CASE("full-model gradient check") {
  const auto cfg = small_config();
  auto p = init_params<double>(cfg, 7);
  jitter(p, 3, 0.1);
  const auto seq = encode_example("{'a': 1.5}", cfg);
  const auto patches = random_patches<double>(cfg, 13);
  ir::NumericVector u;
  gen::Rng r(14);
  for (int i = 0; i < 5; ++i) {
    u.slots[static_cast<std::size_t>(i)] = r.uniform();
    u.mask[static_cast<std::size_t>(i)] = true;
  }
  auto grads = Params<double>::zeros(cfg);
  const auto L = loss_and_gradients(p, cfg, seq, patches, &u, LossKind::text_plus_num, 1.0, &grads);
  CHECK(L.num > 0.0);

  auto ps = tensors(p);
  auto gs = tensors(grads);
  std::size_t total = 0;
  for (auto* m : ps) total += static_cast<std::size_t>(m->size());
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    auto flat = static_cast<std::size_t>(r.uniform_int(0, static_cast<std::int64_t>(total) - 1));
    std::size_t k = 0;
    while (flat >= static_cast<std::size_t>(ps[k]->size())) flat -= static_cast<std::size_t>(ps[k++]->size());
    double& x = ps[k]->data()[flat];
    const double old = x, h = 1e-5;
    x = old + h;
    const double lp = loss_and_gradients(p, cfg, seq, patches, &u, LossKind::text_plus_num).total;
    x = old - h;
    const double lm = loss_and_gradients(p, cfg, seq, patches, &u, LossKind::text_plus_num).total;
    x = old;
    const double fd = (lp - lm) / (2 * h);
    const double an = gs[k]->data()[flat];
    worst = std::max(worst, std::abs(fd - an) / std::max(1e-8, std::abs(fd) + std::abs(an)));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("gradients respect trainable groups and weights") {
  const auto cfg = small_config();
  const auto p = init_params<double>(cfg, 21);
  const auto seq = encode_example(kTarget, cfg);
  const auto patches = random_patches<double>(cfg, 22);
  const auto u = numbers_of(kTarget);
  auto full = Params<double>::zeros(cfg);
  loss_and_gradients(p, cfg, seq, patches, &u, LossKind::text_plus_num, 1.0, &full);
  auto half = Params<double>::zeros(cfg);
  const GroupSet dec_aux = GroupSet{}.with(ParamGroup::decoder).with(ParamGroup::aux);
  loss_and_gradients(p, cfg, seq, patches, &u, LossKind::text_plus_num, 0.5, &half, dec_aux);
  CHECK(half.patch_w.cwiseAbs().maxCoeff() == 0.0);
  CHECK(half.image_pos.cwiseAbs().maxCoeff() == 0.0);
  CHECK(full.patch_w.cwiseAbs().maxCoeff() > 0.0);
  CHECK((half.head_w * 2.0 - full.head_w).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((half.aux_w3 * 2.0 - full.aux_w3).cwiseAbs().maxCoeff() < 1e-12);
  auto text = Params<double>::zeros(cfg);
  loss_and_gradients(p, cfg, seq, patches, &u, LossKind::text_only, 1.0, &text);
  CHECK(text.aux_w1.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("loss decomposition") {
  auto cfg = small_config();
  cfg.max_seq = 1024;
  auto p = init_params<double>(cfg, 30);
  jitter(p, 31, 0.05);
  std::mt19937_64 r(32);
  for (int t = 0; t < 8; ++t) {
    const auto d = oracle::random_dict(r, 4);
    if (d.leaf_count() == 0) continue;
    const std::string target = ir::serialize(d);
    const auto seq = encode_example(target, cfg);
    const auto u = ir::extract_value_vector(d);
    const auto patches = random_patches<double>(cfg, static_cast<std::uint64_t>(40 + t));
    const auto s1 = loss_and_gradients(p, cfg, seq, patches, &u, LossKind::text_only);
    const auto s23 = loss_and_gradients(p, cfg, seq, patches, &u, LossKind::text_plus_num);
    CHECK(s1.total == s1.text);
    CHECK(s1.num == 0.0);
    CHECK(s23.text == s1.text);
    CHECK(s23.total == s23.text + s23.num);
    const auto fw = forward(p, cfg, seq, encode_image(p, patches));
    CHECK(s23.text == doctest::Approx(text_loss(fw.logits, seq)).epsilon(1e-12));
    CHECK(s23.num == doctest::Approx(number_loss(fw.aux->prediction, u)).epsilon(1e-12));
  }
}

TEST_CASE("generation") {
  const auto cfg = two_layer_config();
  auto p = init_params<double>(cfg, 50);
  jitter(p, 51, 0.2);
  const auto patches = random_patches<double>(cfg, 52);
  const auto g = generate(p, cfg, patches, 40);
  const auto g2 = generate(p, cfg, patches, 40);
  CHECK(g.ids == g2.ids);
  CHECK(g.raw_text == g2.raw_text);
  REQUIRE_FALSE(g.ids.empty());
  CHECK(g.ids.front() == kChartMarker);
  CHECK(std::count(g.ids.begin(), g.ids.end(), kChartMarker) == 1);
  CHECK(g.ids.size() <= 41u);
  REQUIRE(g.aux);
  CHECK(g.aux->prediction.size() == 256);
  CHECK_THROWS_AS(ir::parse_raw_output(g.raw_text), ir::ParseFailed);

  SUBCASE("cached decoding matches full forward passes") {
    auto seq = prompt_sequence(cfg);
    for (int id : g.ids) {
      seq.ids.push_back(id);
      seq.segments.push_back(id == kChartMarker ? Segment::chart_marker : Segment::target);
      seq.loss_mask.push_back(false);
    }
    const auto fw = forward(p, cfg, seq, encode_image(p, patches));
    const std::size_t start = prompt_sequence(cfg).size();
    for (std::size_t i = 1; i < g.ids.size(); ++i) {
      const auto row = fw.logits.row(static_cast<Eigen::Index>(start + i - 1));
      int best = kEos;
      for (int b = 0; b < 256; ++b)
        if (row(b) > row(best)) best = b;
      CHECK(best == g.ids[i]);
    }
    REQUIRE(fw.aux);
    CHECK((fw.aux->prediction - g.aux->prediction).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("generation with other marker placements") {
  auto behind = two_layer_config();
  behind.aux_position = AuxPosition::behind;
  const auto p = init_params<double>(behind, 60);
  const auto patches = random_patches<double>(behind, 61);
  const auto g = generate(p, behind, patches, 20);
  CHECK(g.aux.has_value());
  CHECK(std::count(g.ids.begin(), g.ids.end(), kChartMarker) <= 1);
  auto none = behind;
  none.aux_position = AuxPosition::none;
  const auto n = generate(p, none, patches, 20);
  CHECK_FALSE(n.aux.has_value());
  CHECK(std::count(n.ids.begin(), n.ids.end(), kChartMarker) == 0);
}

TEST_CASE("checkpoint") {
  auto ckpt = new_checkpoint(small_config(), 70);
  CHECK_FALSE(ckpt.aux_initialized);
  CHECK(ckpt.params.aux_w1.cwiseAbs().maxCoeff() == 0.0f);
  CHECK(ckpt.params.patch_w.cwiseAbs().maxCoeff() > 0.0f);
  ckpt.completed_stages = {"S1"};
  const auto bytes = encode_checkpoint(ckpt);
  const auto back = decode_checkpoint(bytes);
  CHECK(back.config == ckpt.config);
  CHECK(back.completed_stages == ckpt.completed_stages);
  CHECK(back.seed == ckpt.seed);
  CHECK(back.rng_state == ckpt.rng_state);
  CHECK(encode_checkpoint(back) == bytes);

  const auto dir = oracle::temp_dir("ckpt");
  save_checkpoint((dir / "m.ckpt").string(), ckpt);
  CHECK(encode_checkpoint(load_checkpoint((dir / "m.ckpt").string())) == bytes);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), CheckpointError);
  auto bad_version = bytes;
  bad_version[8] = 99;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), CheckpointError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(truncated), CheckpointError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), CheckpointError);
}
