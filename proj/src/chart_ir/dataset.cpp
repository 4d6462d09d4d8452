#include <fstream>

#include <json.hpp>

#include "chartex/chart_ir.h"

namespace chartex::ir {

std::string to_jsonl_line(const DatasetRecord& r) {
  nlohmann::ordered_json j;
  j["image"] = r.image;
  j["gt"] = serialize(r.gt);
  j["annotated"] = r.annotated;
  j["chart_type"] = r.chart_type;
  return j.dump();
}

DatasetRecord from_jsonl_line(std::string_view line) {
  const auto j = nlohmann::json::parse(line.begin(), line.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw std::runtime_error("record is not a JSON object");
  try {
    DatasetRecord r;
    r.image = j.at("image").get<std::string>();
    r.gt = parse_raw_output(j.at("gt").get<std::string>());
    r.annotated = j.at("annotated").get<bool>();
    r.chart_type = j.at("chart_type").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("bad record: ") + e.what());
  } catch (const ParseFailed& e) {
    throw std::runtime_error(std::string("bad gt field: ") + e.what());
  }
}

std::vector<DatasetRecord> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path);
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(from_jsonl_line(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace chartex::ir
