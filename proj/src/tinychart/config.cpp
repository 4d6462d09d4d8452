#include "chartex/tinychart/config.h"

#include <json.hpp>

namespace chartex::tiny {

const char* to_string(AuxPosition p) {
  switch (p) {
    case AuxPosition::front: return "front";
    case AuxPosition::behind: return "behind";
    case AuxPosition::none: return "none";
  }
  return "?";
}

AuxPosition aux_position_from_string(const std::string& s) {
  if (s == "front") return AuxPosition::front;
  if (s == "behind") return AuxPosition::behind;
  if (s == "none") return AuxPosition::none;
  throw InvalidModelConfig("aux_position must be front, behind or none");
}

ModelConfig& ModelConfig::derive() {
  if (patch_size > 0) {
    const int side = image_size / patch_size;
    n_image_tokens = side * side;
  }
  aux_hidden = 2 * d_model;
  return *this;
}

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || ffn_mult <= 0) {
    throw InvalidModelConfig("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw InvalidModelConfig("d_model must be divisible by n_heads");
  if (vocab_size != kVocabSize) throw InvalidModelConfig("vocab_size must be " + std::to_string(kVocabSize));
  if (patch_size <= 0 || image_size % patch_size != 0) {
    throw InvalidModelConfig("image_size must be a multiple of patch_size");
  }
  const int side = image_size / patch_size;
  if (n_image_tokens != side * side) throw InvalidModelConfig("n_image_tokens must be (image_size/patch_size)^2");
  if (aux_dim != 256) throw InvalidModelConfig("aux_dim must be 256");
  if (aux_hidden <= 0) throw InvalidModelConfig("aux_hidden must be positive");
  if (max_seq <= n_image_tokens) throw InvalidModelConfig("max_seq must exceed the image token count");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["d_model"] = d_model;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["ffn_mult"] = ffn_mult;
  j["vocab_size"] = vocab_size;
  j["max_seq"] = max_seq;
  j["patch_size"] = patch_size;
  j["image_size"] = image_size;
  j["n_image_tokens"] = n_image_tokens;
  j["aux_dim"] = aux_dim;
  j["aux_hidden"] = aux_hidden;
  j["aux_position"] = to_string(aux_position);
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw InvalidModelConfig("model config is not a JSON object");
  ModelConfig c;
  bool explicit_tokens = false;
  bool explicit_aux_hidden = false;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "d_model") c.d_model = v.get<int>();
      else if (key == "n_layers") c.n_layers = v.get<int>();
      else if (key == "n_heads") c.n_heads = v.get<int>();
      else if (key == "ffn_mult") c.ffn_mult = v.get<int>();
      else if (key == "vocab_size") c.vocab_size = v.get<int>();
      else if (key == "max_seq") c.max_seq = v.get<int>();
      else if (key == "patch_size") c.patch_size = v.get<int>();
      else if (key == "image_size") c.image_size = v.get<int>();
      else if (key == "n_image_tokens") { c.n_image_tokens = v.get<int>(); explicit_tokens = true; }
      else if (key == "aux_dim") c.aux_dim = v.get<int>();
      else if (key == "aux_hidden") { c.aux_hidden = v.get<int>(); explicit_aux_hidden = true; }
      else if (key == "aux_position") c.aux_position = aux_position_from_string(v.get<std::string>());
      else throw InvalidModelConfig("unknown model config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidModelConfig(std::string("model config: ") + e.what());
  }
  const int tokens = c.n_image_tokens;
  const int hidden = c.aux_hidden;
  c.derive();
  if (explicit_tokens) c.n_image_tokens = tokens;
  if (explicit_aux_hidden) c.aux_hidden = hidden;
  c.validate();
  return c;
}

}  // namespace chartex::tiny
