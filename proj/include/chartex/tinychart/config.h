#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace chartex::tiny {

// Where the auxiliary <Chart> token sits in the answer.
enum class AuxPosition { front, behind, none };

const char* to_string(AuxPosition p);
AuxPosition aux_position_from_string(const std::string& s);

// Byte vocabulary followed by the special tokens.
inline constexpr int kImgStart = 256;   // <img>
inline constexpr int kImgEnd = 257;     // </img>
inline constexpr int kChartMarker = 258;  // <Chart>
inline constexpr int kEos = 259;        // </s>
inline constexpr int kImagePad = 260;   // placeholder replaced by vision features
inline constexpr int kVocabSize = 261;

struct ModelConfig {
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int ffn_mult = 4;
  int vocab_size = kVocabSize;
  int max_seq = 768;
  int patch_size = 16;
  int image_size = 128;
  int n_image_tokens = 64;
  int aux_dim = 256;
  int aux_hidden = 256;
  AuxPosition aux_position = AuxPosition::front;

  int patch_dim() const { return patch_size * patch_size * 3; }
  int head_dim() const { return d_model / n_heads; }

  // Sets n_image_tokens and aux_hidden from the other fields.
  ModelConfig& derive();
  void validate() const;
  bool operator==(const ModelConfig&) const = default;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

class InvalidModelConfig : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace chartex::tiny
