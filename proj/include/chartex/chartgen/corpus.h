#pragma once

#include <string>
#include <vector>

#include "chartex/chartgen/rng.h"

namespace chartex::gen {

class WordCorpus {
 public:
  explicit WordCorpus(std::vector<std::string> words);

  static const WordCorpus& builtin();
  // One word per line; blank lines and lines starting with '#' are skipped.
  static WordCorpus from_file(const std::string& path);

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  // Draws min..max words and drops trailing words until the phrase fits in
  // max_chars, keeping at least one word.
  std::string phrase(Rng& rng, int min_words, int max_words, int max_chars, bool capitalize) const;

 private:
  std::vector<std::string> words_;
};

// Corpus named by the config: the built-in list when path is empty.
const WordCorpus& corpus_for(const std::string& path);

}  // namespace chartex::gen
