#include "chartex/tinychart/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "chartex/chartgen/rng.h"

namespace chartex::tiny {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'C', 'H', 'R', 'T', 'C', 'K', 'P', 'T'};

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

template <typename U>
U take(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw CheckpointError("checkpoint is truncated");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

}  // namespace

Checkpoint new_checkpoint(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Checkpoint c;
  c.config = cfg;
  c.params = Params<float>::zeros(cfg);
  init_params(c.params, cfg, seed, GroupSet{}.with(ParamGroup::encoder).with(ParamGroup::decoder));
  c.seed = seed;
  c.rng_state = gen::Rng(gen::mix_seed(seed, 404)).state();
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::ordered_json header;
  header["config"] = nlohmann::ordered_json::parse(ckpt.config.to_json());
  auto tensors = nlohmann::ordered_json::array();
  ckpt.params.visit([&](const std::string& name, ParamGroup g, const Mat<float>& m, bool) {
    tensors.push_back({{"name", name}, {"group", to_string(g)}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  header["tensors"] = std::move(tensors);
  header["completed_stages"] = ckpt.completed_stages;
  header["aux_initialized"] = ckpt.aux_initialized;
  header["seed"] = ckpt.seed;
  header["rng_state"] = ckpt.rng_state;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, Checkpoint::kFormatVersion);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  ckpt.params.visit([&](const std::string&, ParamGroup, const Mat<float>& m, bool) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(m.data());
    out.insert(out.end(), p, p + m.size() * sizeof(float));
  });
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != Checkpoint::kFormatVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = take<std::uint64_t>(bytes, pos);
  if (pos + len > bytes.size()) throw CheckpointError("checkpoint header is truncated");
  const auto header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                            bytes.begin() + static_cast<std::ptrdiff_t>(pos + len), nullptr, false);
  if (header.is_discarded()) throw CheckpointError("checkpoint header is not valid JSON");
  pos += len;

  Checkpoint c;
  try {
    c.config = ModelConfig::from_json(header.at("config").dump());
    c.completed_stages = header.at("completed_stages").get<std::vector<std::string>>();
    c.aux_initialized = header.at("aux_initialized").get<bool>();
    c.seed = header.at("seed").get<std::uint64_t>();
    c.rng_state = header.at("rng_state").get<std::string>();
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what());
  }
  c.params = Params<float>::zeros(c.config);
  const auto& table = header.at("tensors");
  std::size_t i = 0;
  c.params.visit([&](const std::string& name, ParamGroup, Mat<float>& m, bool) {
    if (i >= table.size()) throw CheckpointError("checkpoint is missing tensor " + name);
    const auto& t = table[i++];
    if (t.at("name").get<std::string>() != name || t.at("rows").get<Eigen::Index>() != m.rows() ||
        t.at("cols").get<Eigen::Index>() != m.cols()) {
      throw CheckpointError("tensor " + name + " does not match the model config");
    }
    const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(float);
    if (pos + n > bytes.size()) throw CheckpointError("checkpoint data is truncated");
    std::memcpy(m.data(), bytes.data() + pos, n);
    pos += n;
  });
  if (i != table.size() || pos != bytes.size()) throw CheckpointError("checkpoint has trailing data");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace chartex::tiny
