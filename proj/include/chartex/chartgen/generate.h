#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "chartex/chart_ir.h"
#include "chartex/chartgen/render.h"
#include "chartex/chartgen/spec.h"

namespace chartex::gen {

class IoFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { train, val, test };
const char* to_string(Split s);
// 90/5/5 by record index.
Split split_of(std::size_t index);

struct GeneratedChart {
  ChartSpec spec;
  Rendered rendered;
  int resamples = 0;  // specs rejected with RenderOverflow before this one
};

// Record `index` of the corpus defined by (seed, config). Spec seeds are
// derived from (seed, index, attempt), so records are independent of each
// other and of the corpus size.
GeneratedChart generate_chart(std::uint64_t seed, std::size_t index, const GeneratorConfig& config);

struct CorpusSummary {
  std::size_t records = 0;
  std::size_t resamples = 0;
  std::size_t train = 0, val = 0, test = 0;
};

// Writes images/NNNNNN.png, dataset.jsonl (all records) and
// train.jsonl / val.jsonl / test.jsonl into out_dir.
CorpusSummary generate_corpus(std::size_t n, std::uint64_t seed, const GeneratorConfig& config,
                              const std::filesystem::path& out_dir);

}  // namespace chartex::gen
