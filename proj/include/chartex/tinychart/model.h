#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "chartex/chart_ir.h"
#include "chartex/tinychart/config.h"
#include "chartex/tinychart/tokenizer.h"

namespace chartex::tiny {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

enum class ParamGroup : std::uint8_t { encoder = 1, decoder = 2, aux = 4 };
const char* to_string(ParamGroup g);

// Bit set over ParamGroup.
struct GroupSet {
  std::uint8_t bits = 0;
  static GroupSet all() { return {7}; }
  GroupSet with(ParamGroup g) const { return {static_cast<std::uint8_t>(bits | static_cast<std::uint8_t>(g))}; }
  bool has(ParamGroup g) const { return (bits & static_cast<std::uint8_t>(g)) != 0; }
  bool operator==(const GroupSet&) const = default;
};

template <typename T>
struct LayerParams {
  Mat<T> ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b;
  Mat<T> ln2_g, ln2_b, fc_w, fc_b, proj_w, proj_b;
};

template <typename T>
struct Params {
  // encoder
  Mat<T> patch_w, patch_b, image_pos;
  // decoder
  Mat<T> tok_emb, pos_emb;
  std::vector<LayerParams<T>> layers;
  Mat<T> lnf_g, lnf_b, head_w, head_b;
  // auxiliary number decoder
  Mat<T> aux_w1, aux_b1, aux_w2, aux_b2, aux_w3, aux_b3;

  // f(name, group, matrix, decays). Order is fixed and used for checkpoints.
  template <typename F>
  void visit(F&& f) { visit_impl(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_impl(*this, f); }

  static Params zeros(const ModelConfig& cfg);
  std::size_t count() const;
  void set_zero();

  template <typename U>
  Params<U> cast() const {
    Params<U> out;
    out.layers.resize(layers.size());
    std::vector<const Mat<T>*> src;
    visit([&](const std::string&, ParamGroup, const Mat<T>& m, bool) { src.push_back(&m); });
    std::size_t i = 0;
    out.visit([&](const std::string&, ParamGroup, Mat<U>& m, bool) { m = src[i++]->template cast<U>(); });
    return out;
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& p, F& f) {
    f("encoder.patch_w", ParamGroup::encoder, p.patch_w, true);
    f("encoder.patch_b", ParamGroup::encoder, p.patch_b, false);
    f("encoder.image_pos", ParamGroup::encoder, p.image_pos, false);
    f("decoder.tok_emb", ParamGroup::decoder, p.tok_emb, false);
    f("decoder.pos_emb", ParamGroup::decoder, p.pos_emb, false);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      auto& L = p.layers[l];
      const std::string pre = "decoder.layer" + std::to_string(l) + ".";
      f(pre + "ln1_g", ParamGroup::decoder, L.ln1_g, false);
      f(pre + "ln1_b", ParamGroup::decoder, L.ln1_b, false);
      f(pre + "qkv_w", ParamGroup::decoder, L.qkv_w, true);
      f(pre + "qkv_b", ParamGroup::decoder, L.qkv_b, false);
      f(pre + "out_w", ParamGroup::decoder, L.out_w, true);
      f(pre + "out_b", ParamGroup::decoder, L.out_b, false);
      f(pre + "ln2_g", ParamGroup::decoder, L.ln2_g, false);
      f(pre + "ln2_b", ParamGroup::decoder, L.ln2_b, false);
      f(pre + "fc_w", ParamGroup::decoder, L.fc_w, true);
      f(pre + "fc_b", ParamGroup::decoder, L.fc_b, false);
      f(pre + "proj_w", ParamGroup::decoder, L.proj_w, true);
      f(pre + "proj_b", ParamGroup::decoder, L.proj_b, false);
    }
    f("decoder.lnf_g", ParamGroup::decoder, p.lnf_g, false);
    f("decoder.lnf_b", ParamGroup::decoder, p.lnf_b, false);
    f("decoder.head_w", ParamGroup::decoder, p.head_w, true);
    f("decoder.head_b", ParamGroup::decoder, p.head_b, false);
    f("aux.w1", ParamGroup::aux, p.aux_w1, true);
    f("aux.b1", ParamGroup::aux, p.aux_b1, false);
    f("aux.w2", ParamGroup::aux, p.aux_w2, true);
    f("aux.b2", ParamGroup::aux, p.aux_b2, false);
    f("aux.w3", ParamGroup::aux, p.aux_w3, true);
    f("aux.b3", ParamGroup::aux, p.aux_b3, false);
  }
};

// Random initialization of the chosen groups; other groups are left as they are.
template <typename T>
void init_params(Params<T>& p, const ModelConfig& cfg, std::uint64_t seed, GroupSet groups);

template <typename T>
Params<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
struct AuxState {
  RowVec<T> hidden;      // d_model, at the chart marker
  RowVec<T> prediction;  // aux_dim
};

template <typename T>
struct ForwardOutput {
  Mat<T> logits;  // seq_len × vocab_size
  std::optional<AuxState<T>> aux;
};

// Share of the per-image mean patch kept in the patch matrix. The rest is
// subtracted so a flat background does not swamp the glyph strokes.
inline constexpr double kMeanPatchKeep = 0.1;

// Patch matrix (n_image_tokens × patch_dim) from prepare_image output.
template <typename T>
Mat<T> patch_matrix(const std::vector<float>& patches, const ModelConfig& cfg);

// VisionFeatures: n_image_tokens × d_model.
template <typename T>
Mat<T> encode_image(const Params<T>& p, const Mat<T>& patches);

template <typename T>
ForwardOutput<T> forward(const Params<T>& p, const ModelConfig& cfg, const TokenSequence& seq,
                         const Mat<T>& vision);

template <typename T>
RowVec<T> aux_decode(const Params<T>& p, const RowVec<T>& hidden);

// Accumulates parameter gradients of <d_pred, aux_decode(hidden)> into grads
// and returns the gradient with respect to hidden.
template <typename T>
RowVec<T> aux_backward(const Params<T>& p, const RowVec<T>& hidden, const RowVec<T>& d_pred, Params<T>& grads);

class EmptyMask : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class NoValidSlots : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Mean next-token cross-entropy over loss-masked positions.
template <typename T>
T text_loss(const Mat<T>& logits, const TokenSequence& seq);

// Mean absolute error over the valid slots of gt.
template <typename T>
T number_loss(const RowVec<T>& pred, const ir::NumericVector& gt);

enum class LossKind { text_only, text_plus_num };

template <typename T>
struct Losses {
  T text{0};
  T num{0};
  T total{0};
};

// Loss for one example. When grads is given, adds weight × d(total)/d(param)
// for every parameter in `trainable`; other groups are not touched.
template <typename T>
Losses<T> loss_and_gradients(const Params<T>& p, const ModelConfig& cfg, const TokenSequence& seq,
                             const Mat<T>& patches, const ir::NumericVector* numbers, LossKind kind,
                             T weight = T(1), Params<T>* grads = nullptr, GroupSet trainable = GroupSet::all());

template <typename T>
struct Generation {
  std::string raw_text;      // decoded answer bytes, markers and eos removed
  std::vector<int> ids;      // every generated id, including the marker
  std::optional<AuxState<T>> aux;
  bool stopped_at_eos = false;
};

// Greedy decoding with a key/value cache. max_new_tokens bounds the sampled
// tokens; a marker inserted by the template is not counted.
template <typename T>
Generation<T> generate(const Params<T>& p, const ModelConfig& cfg, const Mat<T>& patches, int max_new_tokens);

}  // namespace chartex::tiny
