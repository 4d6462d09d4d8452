#include "chartex/tinychart/tokenizer.h"

#include <algorithm>
#include <array>
#include <utility>

namespace chartex::tiny {
namespace {

constexpr std::string_view kUser = "USER: ";
constexpr std::string_view kInstruction =
    " Covert the key information of the chart to a python dict. ASSITANT: ";

struct Special {
  std::string_view text;
  int id;
};

constexpr std::array<Special, 5> kSpecials{{
    {kImgStartText, kImgStart},
    {kImgEndText, kImgEnd},
    {kChartText, kChartMarker},
    {kEosText, kEos},
    {kImagePlaceholder, kImagePad},
}};

void push(TokenSequence& s, int id, Segment seg) {
  s.ids.push_back(id);
  s.segments.push_back(seg);
  s.loss_mask.push_back(seg == Segment::target || seg == Segment::eos);
}

void push_bytes(TokenSequence& s, std::string_view text, Segment seg) {
  for (unsigned char c : text) push(s, c, seg);
}

void push_image(TokenSequence& s, const ModelConfig& cfg) {
  push(s, kImgStart, Segment::prompt);
  for (int i = 0; i < cfg.n_image_tokens; ++i) push(s, kImagePad, Segment::image);
  push(s, kImgEnd, Segment::prompt);
}

void check_length(const TokenSequence& s, const ModelConfig& cfg) {
  if (s.size() > static_cast<std::size_t>(cfg.max_seq)) {
    throw SequenceTooLong("sequence of " + std::to_string(s.size()) + " tokens exceeds max_seq " +
                          std::to_string(cfg.max_seq));
  }
}

}  // namespace

int TokenSequence::marker_index() const {
  auto it = std::find(segments.begin(), segments.end(), Segment::chart_marker);
  return it == segments.end() ? -1 : static_cast<int>(it - segments.begin());
}

int TokenSequence::first_image_index() const {
  auto it = std::find(segments.begin(), segments.end(), Segment::image);
  return it == segments.end() ? -1 : static_cast<int>(it - segments.begin());
}

std::size_t TokenSequence::image_token_count() const {
  return static_cast<std::size_t>(std::count(segments.begin(), segments.end(), Segment::image));
}

std::size_t TokenSequence::loss_count() const {
  return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), true));
}

std::string build_prompt(std::string_view target, AuxPosition pos, bool with_answer) {
  std::string out;
  out += kUser;
  out += kImgStartText;
  out += kImagePlaceholder;
  out += kImgEndText;
  out += kInstruction;
  if (!with_answer) return out;
  if (pos == AuxPosition::front) out += kChartText;
  out += target;
  if (pos == AuxPosition::behind) out += kChartText;
  out += kEosText;
  return out;
}

TokenSequence tokenize(std::string_view text, const ModelConfig& cfg) {
  TokenSequence s;
  const std::size_t answer = text.find(kInstruction);
  const std::size_t answer_start =
      answer == std::string_view::npos ? std::string_view::npos : answer + kInstruction.size();
  std::size_t i = 0;
  while (i < text.size()) {
    const bool in_answer = answer_start != std::string_view::npos && i >= answer_start;
    bool matched = false;
    for (const auto& sp : kSpecials) {
      if (text.compare(i, sp.text.size(), sp.text) != 0) continue;
      if (sp.id == kImagePad) {
        for (int k = 0; k < cfg.n_image_tokens; ++k) push(s, kImagePad, Segment::image);
      } else if (sp.id == kChartMarker) {
        push(s, kChartMarker, Segment::chart_marker);
      } else if (sp.id == kEos) {
        push(s, kEos, in_answer ? Segment::eos : Segment::prompt);
      } else {
        push(s, sp.id, Segment::prompt);
      }
      i += sp.text.size();
      matched = true;
      break;
    }
    if (matched) continue;
    push(s, static_cast<unsigned char>(text[i]), in_answer ? Segment::target : Segment::prompt);
    ++i;
  }
  // A marker placed after the target is supervised like the rest of the answer.
  const int m = s.marker_index();
  if (m >= 0 && m > 0 && s.segments[m - 1] == Segment::target) s.loss_mask[m] = true;
  check_length(s, cfg);
  return s;
}

TokenSequence prompt_sequence(const ModelConfig& cfg) {
  TokenSequence s;
  push_bytes(s, kUser, Segment::prompt);
  push_image(s, cfg);
  push_bytes(s, kInstruction, Segment::prompt);
  check_length(s, cfg);
  return s;
}

TokenSequence encode_example(std::string_view target, const ModelConfig& cfg) {
  TokenSequence s;
  push_bytes(s, kUser, Segment::prompt);
  push_image(s, cfg);
  push_bytes(s, kInstruction, Segment::prompt);
  if (cfg.aux_position == AuxPosition::front) push(s, kChartMarker, Segment::chart_marker);
  push_bytes(s, target, Segment::target);
  if (cfg.aux_position == AuxPosition::behind) {
    push(s, kChartMarker, Segment::chart_marker);
    s.loss_mask.back() = true;
  }
  push(s, kEos, Segment::eos);
  check_length(s, cfg);
  return s;
}

std::string decode_ids(const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    if (id >= 0 && id < 256) {
      out.push_back(static_cast<char>(id));
      continue;
    }
    for (const auto& sp : kSpecials) {
      if (sp.id == id) out += sp.text;
    }
  }
  return out;
}

std::string detokenize(const TokenSequence& seq) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.segments[i] == Segment::target) ids.push_back(seq.ids[i]);
  }
  return decode_ids(ids);
}

}  // namespace chartex::tiny
