#include "chartex/chartgen/generate.h"

#include <cstdio>
#include <fstream>

#include "chartex/chartgen/rng.h"

namespace chartex::gen {

namespace {

constexpr int kMaxResamples = 1000;

std::string image_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "images/%06zu.png", index);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoFailure("cannot write " + p.string());
  return out;
}

}  // namespace

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_of(std::size_t index) {
  switch (index % 20) {
    case 0: return Split::val;
    case 1: return Split::test;
    default: return Split::train;
  }
}

GeneratedChart generate_chart(std::uint64_t seed, std::size_t index, const GeneratorConfig& config) {
  const std::uint64_t record_seed = mix_seed(seed, index);
  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    GeneratedChart g;
    g.spec = sample_spec(mix_seed(record_seed, static_cast<std::uint64_t>(attempt)), config);
    try {
      g.rendered = render(g.spec);
      g.resamples = attempt;
      return g;
    } catch (const RenderOverflow&) {
    }
  }
  throw InvalidConfig("no renderable chart after " + std::to_string(kMaxResamples) +
                      " samples; canvas too small for the configured content?");
}

CorpusSummary generate_corpus(std::size_t n, std::uint64_t seed, const GeneratorConfig& config,
                              const std::filesystem::path& out_dir) {
  if (n < 1) throw std::invalid_argument("corpus size must be at least 1");
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoFailure("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  std::ofstream all = open_out(out_dir / "dataset.jsonl");
  std::ofstream train = open_out(out_dir / "train.jsonl");
  std::ofstream val = open_out(out_dir / "val.jsonl");
  std::ofstream test = open_out(out_dir / "test.jsonl");

  CorpusSummary summary;
  for (std::size_t i = 0; i < n; ++i) {
    GeneratedChart g = generate_chart(seed, i, config);
    ir::DatasetRecord rec;
    rec.image = image_name(i);
    rec.gt = g.spec.content;
    rec.annotated = g.spec.annotated;
    rec.chart_type = to_string(g.spec.chart_type);
    try {
      write_png((out_dir / rec.image).string(), g.rendered.image);
    } catch (const std::runtime_error& e) {
      throw IoFailure(e.what());
    }
    const std::string line = ir::to_jsonl_line(rec) + "\n";
    all << line;
    switch (split_of(i)) {
      case Split::train: train << line; ++summary.train; break;
      case Split::val: val << line; ++summary.val; break;
      case Split::test: test << line; ++summary.test; break;
    }
    summary.resamples += static_cast<std::size_t>(g.resamples);
    ++summary.records;
  }
  for (auto* f : {&all, &train, &val, &test}) {
    f->flush();
    if (!*f) throw IoFailure("write failed in " + out_dir.string());
  }
  return summary;
}

}  // namespace chartex::gen
