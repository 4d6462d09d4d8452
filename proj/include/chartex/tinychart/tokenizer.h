#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "chartex/tinychart/config.h"

namespace chartex::tiny {

enum class Segment : std::uint8_t { prompt, image, chart_marker, target, eos };

struct TokenSequence {
  std::vector<int> ids;
  std::vector<Segment> segments;
  std::vector<bool> loss_mask;

  std::size_t size() const { return ids.size(); }
  // Index of the chart marker, or -1 when the sequence has none.
  int marker_index() const;
  int first_image_index() const;
  std::size_t image_token_count() const;
  std::size_t loss_count() const;
};

class SequenceTooLong : public std::length_error {
 public:
  using std::length_error::length_error;
};

// Literal spellings of the special tokens inside template text.
inline constexpr std::string_view kImgStartText = "<img>";
inline constexpr std::string_view kImgEndText = "</img>";
inline constexpr std::string_view kChartText = "<Chart>";
inline constexpr std::string_view kEosText = "</s>";
inline constexpr std::string_view kImagePlaceholder = "[image]";

// Conversation template with the target filled in. The marker is placed
// according to `pos`; an empty target with `with_answer` false yields the
// prompt alone, ending right after "ASSITANT: ".
std::string build_prompt(std::string_view target, AuxPosition pos = AuxPosition::front,
                         bool with_answer = true);

// Parses template text. Everything after "ASSITANT: " that is not a special
// token is target text.
TokenSequence tokenize(std::string_view text, const ModelConfig& cfg);

// Tokens of the prompt up to and including "ASSITANT: ".
TokenSequence prompt_sequence(const ModelConfig& cfg);

// Training example built directly from the structured pieces, so target text
// containing special-token spellings cannot be misread.
TokenSequence encode_example(std::string_view target, const ModelConfig& cfg);

// Decodes the target-segment bytes. Special ids map to their spellings.
std::string detokenize(const TokenSequence& seq);
std::string decode_ids(const std::vector<int>& ids);

}  // namespace chartex::tiny
