#include "chartex/chartgen/corpus.h"

#include <cctype>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string_view>

namespace chartex::gen {

extern const std::string_view kBuiltinWords;

namespace {

std::vector<std::string> split_lines(std::istream& in) {
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    const auto start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    words.push_back(line.substr(start));
  }
  return words;
}

}  // namespace

WordCorpus::WordCorpus(std::vector<std::string> words) : words_(std::move(words)) {
  if (words_.empty()) throw std::invalid_argument("word corpus is empty");
}

const WordCorpus& WordCorpus::builtin() {
  static const WordCorpus corpus = [] {
    std::istringstream in{std::string(kBuiltinWords)};
    return WordCorpus(split_lines(in));
  }();
  return corpus;
}

WordCorpus WordCorpus::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus " + path);
  return WordCorpus(split_lines(in));
}

std::string WordCorpus::phrase(Rng& rng, int min_words, int max_words, int max_chars, bool capitalize) const {
  const auto n = rng.uniform_int(min_words, max_words);
  std::vector<const std::string*> picked;
  for (std::int64_t i = 0; i < n; ++i) picked.push_back(&rng.pick(words_));
  std::string out;
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const std::string candidate = out.empty() ? *picked[i] : out + " " + *picked[i];
    if (i > 0 && static_cast<int>(candidate.size()) > max_chars) break;
    out = candidate;
  }
  if (static_cast<int>(out.size()) > max_chars) out.resize(static_cast<std::size_t>(max_chars));
  if (capitalize && !out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

const WordCorpus& corpus_for(const std::string& path) {
  if (path.empty()) return WordCorpus::builtin();
  static std::mutex mu;
  static std::map<std::string, WordCorpus> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(path);
  if (it == cache.end()) it = cache.emplace(path, WordCorpus::from_file(path)).first;
  return it->second;
}

}  // namespace chartex::gen
