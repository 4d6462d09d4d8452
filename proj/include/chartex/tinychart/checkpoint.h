#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "chartex/tinychart/config.h"
#include "chartex/tinychart/model.h"

namespace chartex::tiny {

// Binary container: "CHRTCKPT" magic, u32 format version, u64 header length,
// JSON header (config, tensor table, training metadata), then every tensor as
// little-endian float32 in header order.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelConfig config;
  Params<float> params;
  std::vector<std::string> completed_stages;
  bool aux_initialized = false;
  std::uint64_t seed = 0;
  std::string rng_state;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fresh checkpoint: encoder and decoder initialized, aux left at zero.
Checkpoint new_checkpoint(const ModelConfig& cfg, std::uint64_t seed);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace chartex::tiny
