#include <doctest.h>

#include <cmath>
#include <random>

#include "chartex/chart_ir.h"
#include "support/oracles.h"

using namespace chartex::ir;

namespace {

ChartDict flat(std::vector<std::pair<std::string, double>> kv) {
  ChartDict d;
  for (auto& [k, v] : kv) d.values.push_back({k, v});
  return d;
}

}  // namespace

TEST_CASE("serialize writes the canonical literal") {
  ChartDict d = flat({{"A", 1.0}});
  d.title = "T";
  CHECK(serialize(d) == R"({"title": "T", "source": "", "x_axis": "", "y_axis": "", "values": {"A": 1.0}})");

  ChartDict empty;
  CHECK(serialize(empty) == R"({"title": "", "source": "", "x_axis": "", "y_axis": "", "values": {}})");
}

TEST_CASE("serialize keeps legend order in nested rows") {
  ChartDict d;
  d.values.push_back({"2020", LegendSeries{{"Zeta", 3.5}, {"Alpha", -1.0}}});
  d.values.push_back({"2019", LegendSeries{{"Zeta", 2.0}, {"Alpha", 0.25}}});
  const std::string s = serialize(d);
  CHECK(s.find(R"("2020": {"Zeta": 3.5, "Alpha": -1.0})") != std::string::npos);
  CHECK(s.find("2020") < s.find("2019"));
  CHECK(parse_raw_output(s) == d);
}

TEST_CASE("parse_raw_output strips the end marker and fills missing fields") {
  ChartDict d = flat({{"A", 2.0}, {"B", 4.0}});
  d.title = "Revenue";
  CHECK(parse_raw_output(serialize(d) + "</s>") == d);
  CHECK(parse_raw_output("  " + serialize(d) + " </s>\n") == d);

  const ChartDict partial = parse_raw_output(R"({"values": {"A": 1}})");
  CHECK(partial.title.empty());
  CHECK(partial.source.empty());
  CHECK(partial.x_axis.empty());
  CHECK(partial.y_axis.empty());
  REQUIRE(partial.values.size() == 1);
  CHECK(std::get<double>(partial.values[0].value) == 1.0);
}

TEST_CASE("parse_raw_output rejects malformed text") {
  CHECK_THROWS_AS(parse_raw_output(R"({"title": "T")"), ParseFailed);
  CHECK_THROWS_AS(parse_raw_output(""), ParseFailed);
  CHECK_THROWS_AS(parse_raw_output("[1, 2]"), ParseFailed);
  CHECK_THROWS_AS(parse_raw_output("not a dict </s>"), ParseFailed);
}

TEST_CASE("parse_raw_output canonicalizes decorated numbers") {
  const ChartDict d = parse_raw_output(R"({"values": {"A": "70.8%", "B": "1,234", "C": "n/a"}})");
  REQUIRE(d.values.size() == 3);
  CHECK(std::get<double>(d.values[0].value) == doctest::Approx(70.8));
  CHECK(std::get<double>(d.values[1].value) == 1234.0);
  CHECK(std::isnan(std::get<double>(d.values[2].value)));
}

TEST_CASE("canonicalize_number") {
  CHECK(canonicalize_number("70.8%") == doctest::Approx(70.8));
  CHECK(canonicalize_number("1,234") == 1234.0);
  CHECK(canonicalize_number("-3.5") == -3.5);
  CHECK(canonicalize_number(" 12 ") == 12.0);
  CHECK_THROWS_AS(canonicalize_number("n/a"), NotNumeric);
  CHECK_THROWS_AS(canonicalize_number(""), NotNumeric);
  CHECK_THROWS_AS(canonicalize_number("%"), NotNumeric);
  CHECK_THROWS_AS(canonicalize_number("inf"), NotNumeric);
}

TEST_CASE("flatten_values reads rows then legends") {
  CHECK(flatten_values(ChartDict{}).empty());
  const auto f = flatten_values(flat({{"A", 1}, {"B", 2}}));
  REQUIRE(f.size() == 2);
  CHECK(f[0] == Tuple{"A", std::nullopt, 1});
  CHECK(f[1] == Tuple{"B", std::nullopt, 2});

  ChartDict n;
  n.values.push_back({"A", LegendSeries{{"L1", 1}, {"L2", 2}}});
  const auto g = flatten_values(n);
  REQUIRE(g.size() == 2);
  CHECK(g[0] == Tuple{"A", std::string("L1"), 1});
  CHECK(g[1] == Tuple{"A", std::string("L2"), 2});
}

TEST_CASE("minmax_normalize") {
  CHECK(minmax_normalize({2, 4, 6}) == std::vector<double>{0, 0.5, 1});
  CHECK(minmax_normalize({10, -10}) == std::vector<double>{1, 0});
  CHECK(minmax_normalize({7, 7, 7}) == std::vector<double>{0.5, 0.5, 0.5});
  CHECK_THROWS_AS(minmax_normalize({}), EmptyInput);
}

TEST_CASE("extract_value_vector") {
  const auto v = extract_value_vector(flat({{"A", 2}, {"B", 4}, {"C", 6}}));
  CHECK(v.slots[0] == 0.0);
  CHECK(v.slots[1] == 0.5);
  CHECK(v.slots[2] == 1.0);
  CHECK(v.mask[0]);
  CHECK(v.mask[2]);
  CHECK_FALSE(v.mask[3]);
  CHECK(std::isnan(v.slots[3]));
  CHECK(v.valid_count() == 3);

  const auto one = extract_value_vector(flat({{"A", 5}}));
  CHECK(one.slots[0] == 0.5);
  CHECK(one.valid_count() == 1);

  ChartDict big;
  for (int i = 0; i < 257; ++i) big.values.push_back({"k" + std::to_string(i), static_cast<double>(i)});
  CHECK_THROWS_AS(extract_value_vector(big), TooManyValues);
  big.values.pop_back();
  CHECK(extract_value_vector(big).valid_count() == 256);

  ChartDict bad = flat({{"A", 1}, {"B", kNotNumeric}});
  CHECK_THROWS_AS(extract_value_vector(bad), NotNumeric);
}

TEST_CASE("validate enforces the structural invariants") {
  CHECK_NOTHROW(validate(flat({{"A", 1}})));
  CHECK_THROWS_AS(validate(flat({{"A", std::nan("")}})), InvalidChartDict);
  CHECK_THROWS_AS(validate(flat({{"A", INFINITY}})), InvalidChartDict);

  ChartDict four;
  four.values.push_back({"A", LegendSeries{{"a", 1}, {"b", 2}, {"c", 3}, {"d", 4}}});
  CHECK_THROWS_AS(validate(four), InvalidChartDict);

  ChartDict mismatch;
  mismatch.values.push_back({"A", LegendSeries{{"a", 1}, {"b", 2}}});
  mismatch.values.push_back({"B", LegendSeries{{"b", 1}, {"a", 2}}});
  CHECK_THROWS_AS(validate(mismatch), InvalidChartDict);

  ChartDict mixed;
  mixed.values.push_back({"A", LegendSeries{{"a", 1}, {"b", 2}}});
  mixed.values.push_back({"B", 3.0});
  CHECK_THROWS_AS(validate(mixed), InvalidChartDict);
}

TEST_CASE("number formatting") {
  CHECK(format_number(1.0) == "1.0");
  CHECK(format_number(70.8) == "70.8");
  CHECK(format_number(-0.25) == "-0.25");
  CHECK(format_label(42.0) == "42");
  CHECK(format_label(70.8) == "70.8");
}

TEST_CASE("property: serialize then parse is the identity") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 500; ++i) {
    const ChartDict d = oracle::random_dict(rng);
    REQUIRE_NOTHROW(validate(d));
    CHECK(parse_raw_output(serialize(d) + std::string(kEndOfSequence)) == d);
  }
}

TEST_CASE("property: flatten order follows row order") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    ChartDict d = oracle::random_dict(rng);
    const auto before = flatten_values(d);
    std::vector<std::size_t> perm(d.values.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    ChartDict p = d;
    for (std::size_t r = 0; r < perm.size(); ++r) p.values[r] = d.values[perm[r]];
    const auto after = flatten_values(p);
    REQUIRE(after.size() == before.size());
    const std::size_t per_row = d.values.empty() ? 0 : before.size() / d.values.size();
    for (std::size_t r = 0; r < perm.size(); ++r) {
      for (std::size_t k = 0; k < per_row; ++k) CHECK(after[r * per_row + k] == before[perm[r] * per_row + k]);
    }
  }
}

TEST_CASE("property: normalization is invariant under positive affine maps") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1000, 1000);
  std::uniform_real_distribution<double> scale(0.01, 100);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> xs(1 + rng() % 20);
    for (auto& x : xs) x = u(rng);
    const double a = scale(rng);
    const double b = u(rng);
    std::vector<double> ys;
    for (double x : xs) ys.push_back(a * x + b);
    const auto nx = minmax_normalize(xs);
    const auto ny = minmax_normalize(ys);
    for (std::size_t k = 0; k < xs.size(); ++k) CHECK(std::abs(nx[k] - ny[k]) <= 1e-12);
  }
}

TEST_CASE("property: value mask is a prefix of length leaf_count") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 300; ++i) {
    const ChartDict d = oracle::random_dict(rng, 12);
    if (d.leaf_count() == 0) continue;
    const auto v = extract_value_vector(d);
    for (std::size_t k = 0; k < kValueSlots; ++k) {
      CHECK(v.mask[k] == (k < d.leaf_count()));
      if (v.mask[k]) CHECK((v.slots[k] >= 0.0 && v.slots[k] <= 1.0));
      else CHECK(std::isnan(v.slots[k]));
    }
  }
}

TEST_CASE("dataset records round-trip through JSONL") {
  DatasetRecord r;
  r.image = "images/000001.png";
  r.gt = flat({{"A", 1.5}});
  r.gt.title = "Quote \" and slash \\";
  r.annotated = true;
  r.chart_type = "SingleColumn";
  const auto line = to_jsonl_line(r);
  CHECK(line.find('\n') == std::string::npos);
  const auto back = from_jsonl_line(line);
  CHECK(back.image == r.image);
  CHECK(back.gt == r.gt);
  CHECK(back.annotated);
  CHECK(back.chart_type == r.chart_type);
}
