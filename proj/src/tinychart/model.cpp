#include "chartex/tinychart/model.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "chartex/chartgen/rng.h"

namespace chartex::tiny {
namespace {

constexpr double kLnEps = 1e-5;

template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
Mat<T> zero_mat(Eigen::Index r, Eigen::Index c) {
  return Mat<T>::Zero(r, c);
}

// Box-Muller on the project RNG, so initial weights do not depend on the
// standard library's normal distribution.
class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : rng_(seed) {}
  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = rng_.uniform();
    while (u1 <= 0.0) u1 = rng_.uniform();
    const double u2 = rng_.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  gen::Rng rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <typename T>
void fill_normal(Mat<T>& m, Gaussian& g, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(g() * stddev);
}

template <typename T>
struct LayerNormOut {
  Mat<T> y, xhat;
  ColVec<T> rstd;
};

template <typename T>
LayerNormOut<T> layer_norm(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b) {
  LayerNormOut<T> o;
  const Eigen::Index n = x.rows();
  const T inv_d = T(1) / static_cast<T>(x.cols());
  o.xhat.resize(n, x.cols());
  o.rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).sum() * inv_d;
    const auto centred = (x.row(i).array() - mean).eval();
    const T var = centred.square().sum() * inv_d;
    const T r = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
    o.rstd(i) = r;
    o.xhat.row(i) = centred * r;
  }
  o.y = (o.xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
  return o;
}

// Returns dx; accumulates dg/db when given.
template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& xhat, const ColVec<T>& rstd, const Mat<T>& g,
                           Mat<T>* dg, Mat<T>* db) {
  if (dg) dg->row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  if (db) db->row(0) += dy.colwise().sum();
  const Mat<T> dxhat = dy.array().rowwise() * g.row(0).array();
  const T inv_d = T(1) / static_cast<T>(dy.cols());
  Mat<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).sum() * inv_d;
    const T m2 = dxhat.row(i).dot(xhat.row(i)) * inv_d;
    dx.row(i) = (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * rstd(i);
  }
  return dx;
}

template <typename T>
constexpr T gelu_c() {
  return static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
}

template <typename T>
Mat<T> gelu(const Mat<T>& u) {
  const auto a = u.array();
  return (T(0.5) * a * (T(1) + (gelu_c<T>() * (a + T(0.044715) * a.cube())).tanh())).matrix();
}

template <typename T>
Mat<T> gelu_grad(const Mat<T>& u) {
  const auto a = u.array();
  const auto t = (gelu_c<T>() * (a + T(0.044715) * a.cube())).tanh().eval();
  return (T(0.5) * (T(1) + t) +
          T(0.5) * a * (T(1) - t.square()) * gelu_c<T>() * (T(1) + T(3 * 0.044715) * a.square()))
      .matrix();
}

template <typename T>
void add_bias(Mat<T>& x, const Mat<T>& b) {
  x.rowwise() += b.row(0);
}

template <typename T>
struct LayerTrace {
  Mat<T> x_in;
  LayerNormOut<T> ln1;
  Mat<T> qkv;
  std::vector<Mat<T>> probs;  // per head, lower triangular
  Mat<T> attn;
  Mat<T> x_mid;
  LayerNormOut<T> ln2;
  Mat<T> u;
  Mat<T> g;
};

template <typename T>
struct Trace {
  Mat<T> vision;
  std::vector<LayerTrace<T>> layers;
  Mat<T> x_final;
  LayerNormOut<T> lnf;
  Mat<T> logits;
};

template <typename T>
void causal_softmax_rows(Mat<T>& s) {
  const Eigen::Index n = s.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index len = std::min<Eigen::Index>(i + 1, s.cols());
    auto head = s.row(i).head(len);
    const T mx = head.maxCoeff();
    head = (head.array() - mx).exp().matrix();
    head /= head.sum();
    s.row(i).tail(s.cols() - len).setZero();
  }
}

// Embeds a token sequence, inserting the vision features at image slots.
template <typename T>
Mat<T> embed(const Params<T>& p, const TokenSequence& seq, const Mat<T>& vision) {
  const auto n = static_cast<Eigen::Index>(seq.size());
  if (n > p.pos_emb.rows()) throw SequenceTooLong("sequence longer than the position table");
  Mat<T> x(n, p.tok_emb.cols());
  Eigen::Index img = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (seq.segments[i] == Segment::image) {
      if (img >= vision.rows()) throw std::invalid_argument("more image slots than vision features");
      x.row(i) = vision.row(img++);
    } else {
      x.row(i) = p.tok_emb.row(seq.ids[i]);
    }
  }
  x += p.pos_emb.topRows(n);
  return x;
}

template <typename T>
void run_layer(const LayerParams<T>& L, int n_heads, LayerTrace<T>& t) {
  const Eigen::Index n = t.x_in.rows();
  const Eigen::Index d = t.x_in.cols();
  const Eigen::Index dh = d / n_heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  t.ln1 = layer_norm(t.x_in, L.ln1_g, L.ln1_b);
  t.qkv.noalias() = t.ln1.y * L.qkv_w;
  add_bias(t.qkv, L.qkv_b);
  t.attn.resize(n, d);
  t.probs.resize(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    const auto q = t.qkv.middleCols(h * dh, dh);
    const auto k = t.qkv.middleCols(d + h * dh, dh);
    const auto v = t.qkv.middleCols(2 * d + h * dh, dh);
    Mat<T>& s = t.probs[h];
    s.noalias() = (q * k.transpose()) * scale;
    causal_softmax_rows(s);
    t.attn.middleCols(h * dh, dh).noalias() = s.template triangularView<Eigen::Lower>() * v;
  }
  t.x_mid = t.x_in;
  t.x_mid.noalias() += t.attn * L.out_w;
  add_bias(t.x_mid, L.out_b);
  t.ln2 = layer_norm(t.x_mid, L.ln2_g, L.ln2_b);
  t.u.noalias() = t.ln2.y * L.fc_w;
  add_bias(t.u, L.fc_b);
  t.g = gelu(t.u);
}

template <typename T>
Mat<T> layer_output(const LayerParams<T>& L, const LayerTrace<T>& t) {
  Mat<T> out = t.x_mid;
  out.noalias() += t.g * L.proj_w;
  add_bias(out, L.proj_b);
  return out;
}

template <typename T>
Trace<T> run_forward(const Params<T>& p, const ModelConfig& cfg, const TokenSequence& seq, const Mat<T>& vision) {
  Trace<T> tr;
  tr.layers.resize(p.layers.size());
  Mat<T> x = embed(p, seq, vision);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    tr.layers[l].x_in = std::move(x);
    run_layer(p.layers[l], cfg.n_heads, tr.layers[l]);
    x = layer_output(p.layers[l], tr.layers[l]);
  }
  tr.x_final = std::move(x);
  tr.lnf = layer_norm(tr.x_final, p.lnf_g, p.lnf_b);
  tr.logits.noalias() = tr.lnf.y * p.head_w;
  add_bias(tr.logits, p.head_b);
  return tr;
}

template <typename T>
struct AuxTrace {
  RowVec<T> z1, r1, z2, r2, out;
};

template <typename T>
AuxTrace<T> run_aux(const Params<T>& p, const RowVec<T>& hidden) {
  AuxTrace<T> a;
  a.z1 = hidden * p.aux_w1 + p.aux_b1;
  a.r1 = a.z1.cwiseMax(T(0));
  a.z2 = a.r1 * p.aux_w2 + p.aux_b2;
  a.r2 = a.z2.cwiseMax(T(0));
  a.out = a.r2 * p.aux_w3 + p.aux_b3;
  return a;
}

template <typename T>
RowVec<T> run_aux_backward(const Params<T>& p, const RowVec<T>& hidden, const AuxTrace<T>& a, const RowVec<T>& d_out,
                           Params<T>* grads) {
  if (grads) {
    grads->aux_w3.noalias() += a.r2.transpose() * d_out;
    grads->aux_b3 += d_out;
  }
  RowVec<T> d2 = (d_out * p.aux_w3.transpose()).array() * (a.z2.array() > T(0)).template cast<T>();
  if (grads) {
    grads->aux_w2.noalias() += a.r1.transpose() * d2;
    grads->aux_b2 += d2;
  }
  RowVec<T> d1 = (d2 * p.aux_w2.transpose()).array() * (a.z1.array() > T(0)).template cast<T>();
  if (grads) {
    grads->aux_w1.noalias() += hidden.transpose() * d1;
    grads->aux_b1 += d1;
  }
  return d1 * p.aux_w1.transpose();
}

bool is_text_token(int id) { return id >= 0 && id < 256; }

}  // namespace

const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::encoder: return "encoder";
    case ParamGroup::decoder: return "decoder";
    case ParamGroup::aux: return "aux";
  }
  return "?";
}

template <typename T>
Params<T> Params<T>::zeros(const ModelConfig& cfg) {
  const Eigen::Index d = cfg.d_model;
  const Eigen::Index ff = static_cast<Eigen::Index>(cfg.d_model) * cfg.ffn_mult;
  Params<T> p;
  p.patch_w = zero_mat<T>(cfg.patch_dim(), d);
  p.patch_b = zero_mat<T>(1, d);
  p.image_pos = zero_mat<T>(cfg.n_image_tokens, d);
  p.tok_emb = zero_mat<T>(cfg.vocab_size, d);
  p.pos_emb = zero_mat<T>(cfg.max_seq, d);
  p.layers.resize(cfg.n_layers);
  for (auto& L : p.layers) {
    L.ln1_g = zero_mat<T>(1, d);
    L.ln1_b = zero_mat<T>(1, d);
    L.qkv_w = zero_mat<T>(d, 3 * d);
    L.qkv_b = zero_mat<T>(1, 3 * d);
    L.out_w = zero_mat<T>(d, d);
    L.out_b = zero_mat<T>(1, d);
    L.ln2_g = zero_mat<T>(1, d);
    L.ln2_b = zero_mat<T>(1, d);
    L.fc_w = zero_mat<T>(d, ff);
    L.fc_b = zero_mat<T>(1, ff);
    L.proj_w = zero_mat<T>(ff, d);
    L.proj_b = zero_mat<T>(1, d);
  }
  p.lnf_g = zero_mat<T>(1, d);
  p.lnf_b = zero_mat<T>(1, d);
  p.head_w = zero_mat<T>(d, cfg.vocab_size);
  p.head_b = zero_mat<T>(1, cfg.vocab_size);
  p.aux_w1 = zero_mat<T>(d, cfg.aux_hidden);
  p.aux_b1 = zero_mat<T>(1, cfg.aux_hidden);
  p.aux_w2 = zero_mat<T>(cfg.aux_hidden, cfg.aux_hidden);
  p.aux_b2 = zero_mat<T>(1, cfg.aux_hidden);
  p.aux_w3 = zero_mat<T>(cfg.aux_hidden, cfg.aux_dim);
  p.aux_b3 = zero_mat<T>(1, cfg.aux_dim);
  return p;
}

template <typename T>
std::size_t Params<T>::count() const {
  std::size_t n = 0;
  visit([&](const std::string&, ParamGroup, const Mat<T>& m, bool) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <typename T>
void Params<T>::set_zero() {
  visit([](const std::string&, ParamGroup, Mat<T>& m, bool) { m.setZero(); });
}

// 2D sine/cosine table over a side × side grid: the first half of the
// channels encodes the row, the second half the column.
template <typename T>
void add_grid_sincos(Mat<T>& pos, int side, double scale) {
  const int quarter = static_cast<int>(pos.cols()) / 4;
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      auto row = pos.row(r * side + c);
      for (int k = 0; k < quarter; ++k) {
        const double freq = std::pow(side * 2.0, -static_cast<double>(k) / quarter) * M_PI;
        row(2 * k) += static_cast<T>(scale * std::sin(r * freq));
        row(2 * k + 1) += static_cast<T>(scale * std::cos(r * freq));
        row(2 * quarter + 2 * k) += static_cast<T>(scale * std::sin(c * freq));
        row(2 * quarter + 2 * k + 1) += static_cast<T>(scale * std::cos(c * freq));
      }
    }
  }
}

template <typename T>
void init_params(Params<T>& p, const ModelConfig& cfg, std::uint64_t seed, GroupSet groups) {
  const double proj_std = 0.02 / std::sqrt(2.0 * cfg.n_layers);
  if (groups.has(ParamGroup::encoder)) {
    Gaussian g(gen::mix_seed(seed, 101));
    fill_normal(p.patch_w, g, 1.0 / std::sqrt(static_cast<double>(cfg.patch_dim())));
    p.patch_b.setZero();
    fill_normal(p.image_pos, g, 0.02);
    add_grid_sincos(p.image_pos, cfg.image_size / cfg.patch_size, 0.25);
  }
  if (groups.has(ParamGroup::decoder)) {
    Gaussian g(gen::mix_seed(seed, 202));
    fill_normal(p.tok_emb, g, 0.02);
    fill_normal(p.pos_emb, g, 0.02);
    for (auto& L : p.layers) {
      L.ln1_g.setOnes();
      L.ln1_b.setZero();
      fill_normal(L.qkv_w, g, 0.02);
      L.qkv_b.setZero();
      fill_normal(L.out_w, g, proj_std);
      L.out_b.setZero();
      L.ln2_g.setOnes();
      L.ln2_b.setZero();
      fill_normal(L.fc_w, g, 0.02);
      L.fc_b.setZero();
      fill_normal(L.proj_w, g, proj_std);
      L.proj_b.setZero();
    }
    p.lnf_g.setOnes();
    p.lnf_b.setZero();
    fill_normal(p.head_w, g, 0.02);
    p.head_b.setZero();
  }
  if (groups.has(ParamGroup::aux)) {
    Gaussian g(gen::mix_seed(seed, 303));
    fill_normal(p.aux_w1, g, std::sqrt(2.0 / static_cast<double>(p.aux_w1.rows())));
    p.aux_b1.setZero();
    fill_normal(p.aux_w2, g, std::sqrt(2.0 / static_cast<double>(p.aux_w2.rows())));
    p.aux_b2.setZero();
    fill_normal(p.aux_w3, g, 0.02);
    p.aux_b3.setZero();
  }
}

template <typename T>
Params<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  Params<T> p = Params<T>::zeros(cfg);
  init_params(p, cfg, seed, GroupSet::all());
  return p;
}

template <typename T>
Mat<T> patch_matrix(const std::vector<float>& patches, const ModelConfig& cfg) {
  const auto expected = static_cast<std::size_t>(cfg.n_image_tokens) * cfg.patch_dim();
  if (patches.size() != expected) throw std::invalid_argument("patch buffer has the wrong size");
  Mat<T> m(cfg.n_image_tokens, cfg.patch_dim());
  for (std::size_t i = 0; i < expected; ++i) m.data()[i] = static_cast<T>(patches[i]);
  const RowVec<T> mean = m.colwise().mean();
  m.rowwise() -= T(1.0 - kMeanPatchKeep) * mean;
  return m;
}

template <typename T>
Mat<T> encode_image(const Params<T>& p, const Mat<T>& patches) {
  Mat<T> v = patches * p.patch_w;
  add_bias(v, p.patch_b);
  v += p.image_pos;
  return v;
}

template <typename T>
RowVec<T> aux_decode(const Params<T>& p, const RowVec<T>& hidden) {
  return run_aux(p, hidden).out;
}

template <typename T>
RowVec<T> aux_backward(const Params<T>& p, const RowVec<T>& hidden, const RowVec<T>& d_pred, Params<T>& grads) {
  return run_aux_backward(p, hidden, run_aux(p, hidden), d_pred, &grads);
}

template <typename T>
ForwardOutput<T> forward(const Params<T>& p, const ModelConfig& cfg, const TokenSequence& seq, const Mat<T>& vision) {
  Trace<T> tr = run_forward(p, cfg, seq, vision);
  ForwardOutput<T> out;
  out.logits = std::move(tr.logits);
  const int m = seq.marker_index();
  if (m >= 0) {
    AuxState<T> aux;
    aux.hidden = tr.lnf.y.row(m);
    aux.prediction = aux_decode(p, aux.hidden);
    out.aux = std::move(aux);
  }
  return out;
}

template <typename T>
T text_loss(const Mat<T>& logits, const TokenSequence& seq) {
  T total = 0;
  std::size_t count = 0;
  for (std::size_t m = 1; m < seq.size(); ++m) {
    if (!seq.loss_mask[m]) continue;
    const auto row = logits.row(static_cast<Eigen::Index>(m - 1));
    const T mx = row.maxCoeff();
    const T lse = mx + std::log((row.array() - mx).exp().sum());
    total += lse - row(seq.ids[m]);
    ++count;
  }
  if (count == 0) throw EmptyMask("no supervised positions in the sequence");
  return total / static_cast<T>(count);
}

template <typename T>
T number_loss(const RowVec<T>& pred, const ir::NumericVector& gt) {
  T total = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ir::kValueSlots; ++i) {
    if (!gt.mask[i]) continue;
    total += std::abs(pred(static_cast<Eigen::Index>(i)) - static_cast<T>(gt.slots[i]));
    ++n;
  }
  if (n == 0) throw NoValidSlots("ground truth has no valid slots");
  return total / static_cast<T>(n);
}

template <typename T>
Losses<T> loss_and_gradients(const Params<T>& p, const ModelConfig& cfg, const TokenSequence& seq,
                             const Mat<T>& patches, const ir::NumericVector* numbers, LossKind kind, T weight,
                             Params<T>* grads, GroupSet trainable) {
  const Mat<T> vision = encode_image(p, patches);
  Trace<T> tr = run_forward(p, cfg, seq, vision);
  Losses<T> losses;
  losses.text = text_loss(tr.logits, seq);

  const bool use_num = kind == LossKind::text_plus_num;
  const int marker = seq.marker_index();
  AuxTrace<T> aux;
  RowVec<T> hidden;
  if (use_num) {
    if (marker < 0) throw std::invalid_argument("number loss needs a chart marker");
    if (!numbers) throw std::invalid_argument("number loss needs ground-truth values");
    hidden = tr.lnf.y.row(marker);
    aux = run_aux(p, hidden);
    losses.num = number_loss(aux.out, *numbers);
  }
  losses.total = losses.text + losses.num;
  if (!grads) return losses;

  Params<T>& gr = *grads;
  const Eigen::Index n = static_cast<Eigen::Index>(seq.size());

  // d text / d logits
  Mat<T> dlogits = zero_mat<T>(n, tr.logits.cols());
  const T text_scale = weight / static_cast<T>(seq.loss_count() - (seq.loss_mask[0] ? 1 : 0));
  for (Eigen::Index m = 1; m < n; ++m) {
    if (!seq.loss_mask[m]) continue;
    const auto row = tr.logits.row(m - 1);
    const T mx = row.maxCoeff();
    RowVec<T> e = (row.array() - mx).exp();
    e /= e.sum();
    e(seq.ids[m]) -= T(1);
    dlogits.row(m - 1) = e * text_scale;
  }
  gr.head_w.noalias() += tr.lnf.y.transpose() * dlogits;
  gr.head_b.row(0) += dlogits.colwise().sum();
  Mat<T> dlnf = dlogits * p.head_w.transpose();

  if (use_num) {
    RowVec<T> dout = RowVec<T>::Zero(aux.out.cols());
    const T num_scale = weight / static_cast<T>(numbers->valid_count());
    for (std::size_t i = 0; i < ir::kValueSlots; ++i) {
      if (!numbers->mask[i]) continue;
      const T diff = aux.out(static_cast<Eigen::Index>(i)) - static_cast<T>(numbers->slots[i]);
      dout(static_cast<Eigen::Index>(i)) = diff > 0 ? num_scale : (diff < 0 ? -num_scale : T(0));
    }
    Params<T>* aux_grads = trainable.has(ParamGroup::aux) ? grads : nullptr;
    dlnf.row(marker) += run_aux_backward(p, hidden, aux, dout, aux_grads);
  }

  Mat<T> dx = layer_norm_backward(dlnf, tr.lnf.xhat, tr.lnf.rstd, p.lnf_g, &gr.lnf_g, &gr.lnf_b);

  const Eigen::Index d = cfg.d_model;
  const Eigen::Index dh = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const LayerParams<T>& L = p.layers[li];
    LayerParams<T>& G = gr.layers[li];
    const LayerTrace<T>& t = tr.layers[li];

    // MLP block
    G.proj_w.noalias() += t.g.transpose() * dx;
    G.proj_b.row(0) += dx.colwise().sum();
    Mat<T> du = (dx * L.proj_w.transpose()).array() * gelu_grad(t.u).array();
    G.fc_w.noalias() += t.ln2.y.transpose() * du;
    G.fc_b.row(0) += du.colwise().sum();
    Mat<T> dln2 = du * L.fc_w.transpose();
    Mat<T> dmid = dx + layer_norm_backward(dln2, t.ln2.xhat, t.ln2.rstd, L.ln2_g, &G.ln2_g, &G.ln2_b);

    // attention block
    G.out_w.noalias() += t.attn.transpose() * dmid;
    G.out_b.row(0) += dmid.colwise().sum();
    const Mat<T> dattn = dmid * L.out_w.transpose();
    Mat<T> dqkv(n, 3 * d);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto q = t.qkv.middleCols(h * dh, dh);
      const auto k = t.qkv.middleCols(d + h * dh, dh);
      const auto v = t.qkv.middleCols(2 * d + h * dh, dh);
      const Mat<T>& P = t.probs[h];
      const auto dout = dattn.middleCols(h * dh, dh);
      Mat<T> dP = dout * v.transpose();
      dqkv.middleCols(2 * d + h * dh, dh).noalias() = P.transpose().template triangularView<Eigen::Upper>() * dout;
      // softmax backward, restricted to the causal triangle
      Mat<T> dS(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index len = i + 1;
        const T dot = P.row(i).head(len).dot(dP.row(i).head(len));
        dS.row(i).head(len) = P.row(i).head(len).array() * (dP.row(i).head(len).array() - dot);
        dS.row(i).tail(n - len).setZero();
      }
      dS *= scale;
      dqkv.middleCols(h * dh, dh).noalias() = dS.template triangularView<Eigen::Lower>() * k;
      dqkv.middleCols(d + h * dh, dh).noalias() = dS.transpose().template triangularView<Eigen::Upper>() * q;
    }
    G.qkv_w.noalias() += t.ln1.y.transpose() * dqkv;
    G.qkv_b.row(0) += dqkv.colwise().sum();
    Mat<T> dln1 = dqkv * L.qkv_w.transpose();
    dx = dmid + layer_norm_backward(dln1, t.ln1.xhat, t.ln1.rstd, L.ln1_g, &G.ln1_g, &G.ln1_b);
  }

  // embeddings
  gr.pos_emb.topRows(n) += dx;
  Mat<T> dvision;
  const bool train_encoder = trainable.has(ParamGroup::encoder);
  if (train_encoder) dvision = zero_mat<T>(vision.rows(), vision.cols());
  Eigen::Index img = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (seq.segments[i] == Segment::image) {
      if (train_encoder) dvision.row(img) += dx.row(i);
      ++img;
    } else {
      gr.tok_emb.row(seq.ids[i]) += dx.row(i);
    }
  }
  if (train_encoder) {
    gr.patch_w.noalias() += patches.transpose() * dvision;
    gr.patch_b.row(0) += dvision.colwise().sum();
    gr.image_pos += dvision;
  }
  return losses;
}

namespace {

template <typename T>
class Decoder {
 public:
  Decoder(const Params<T>& p, const ModelConfig& cfg) : p_(p), cfg_(cfg) {
    keys_.assign(p.layers.size(), zero_mat<T>(cfg.max_seq, cfg.d_model));
    values_.assign(p.layers.size(), zero_mat<T>(cfg.max_seq, cfg.d_model));
  }

  int length() const { return len_; }

  // Runs the prompt in one pass and fills the cache.
  void prefill(const TokenSequence& seq, const Mat<T>& vision) {
    Trace<T> tr = run_forward(p_, cfg_, seq, vision);
    const Eigen::Index n = static_cast<Eigen::Index>(seq.size());
    const Eigen::Index d = cfg_.d_model;
    for (std::size_t l = 0; l < p_.layers.size(); ++l) {
      keys_[l].topRows(n) = tr.layers[l].qkv.middleCols(d, d);
      values_[l].topRows(n) = tr.layers[l].qkv.middleCols(2 * d, d);
    }
    len_ = static_cast<int>(n);
    last_logits_ = tr.logits.row(n - 1);
    last_hidden_ = tr.lnf.y.row(n - 1);
  }

  void step(int id) {
    const Eigen::Index d = cfg_.d_model;
    const Eigen::Index dh = cfg_.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const Eigen::Index pos = len_;
    Mat<T> x = p_.tok_emb.row(id) + p_.pos_emb.row(pos);
    for (std::size_t l = 0; l < p_.layers.size(); ++l) {
      const LayerParams<T>& L = p_.layers[l];
      const auto ln1 = layer_norm(x, L.ln1_g, L.ln1_b);
      Mat<T> qkv = ln1.y * L.qkv_w;
      add_bias(qkv, L.qkv_b);
      keys_[l].row(pos) = qkv.middleCols(d, d);
      values_[l].row(pos) = qkv.middleCols(2 * d, d);
      Mat<T> attn(1, d);
      for (int h = 0; h < cfg_.n_heads; ++h) {
        const auto q = qkv.middleCols(h * dh, dh);
        const auto k = keys_[l].block(0, h * dh, pos + 1, dh);
        const auto v = values_[l].block(0, h * dh, pos + 1, dh);
        RowVec<T> s = (q * k.transpose()) * scale;
        const T mx = s.maxCoeff();
        s = (s.array() - mx).exp().matrix();
        s /= s.sum();
        attn.middleCols(h * dh, dh).noalias() = s * v;
      }
      x.noalias() += attn * L.out_w;
      add_bias(x, L.out_b);
      const auto ln2 = layer_norm(x, L.ln2_g, L.ln2_b);
      Mat<T> u = ln2.y * L.fc_w;
      add_bias(u, L.fc_b);
      x.noalias() += gelu(u) * L.proj_w;
      add_bias(x, L.proj_b);
    }
    const auto lnf = layer_norm(x, p_.lnf_g, p_.lnf_b);
    last_hidden_ = lnf.y.row(0);
    last_logits_ = last_hidden_ * p_.head_w + p_.head_b;
    ++len_;
  }

  const RowVec<T>& logits() const { return last_logits_; }
  const RowVec<T>& hidden() const { return last_hidden_; }

 private:
  const Params<T>& p_;
  const ModelConfig& cfg_;
  std::vector<Mat<T>> keys_, values_;
  int len_ = 0;
  RowVec<T> last_logits_, last_hidden_;
};

// Greedy choice over bytes and eos; the marker competes only when allowed.
template <typename T>
int pick_token(const RowVec<T>& logits, bool allow_marker) {
  int best = kEos;
  T best_v = logits(kEos);
  for (int i = 0; i < 256; ++i) {
    if (logits(i) > best_v) {
      best_v = logits(i);
      best = i;
    }
  }
  if (allow_marker && logits(kChartMarker) > best_v) best = kChartMarker;
  return best;
}

}  // namespace

template <typename T>
Generation<T> generate(const Params<T>& p, const ModelConfig& cfg, const Mat<T>& patches, int max_new_tokens) {
  Generation<T> out;
  const TokenSequence prompt = prompt_sequence(cfg);
  Decoder<T> dec(p, cfg);
  dec.prefill(prompt, encode_image(p, patches));

  auto capture_aux = [&]() {
    AuxState<T> aux;
    aux.hidden = dec.hidden();
    aux.prediction = aux_decode(p, aux.hidden);
    out.aux = std::move(aux);
  };
  auto room = [&]() { return dec.length() < cfg.max_seq; };

  std::string text;
  int produced = 0;
  if (cfg.aux_position == AuxPosition::front && room()) {
    dec.step(kChartMarker);
    out.ids.push_back(kChartMarker);
    capture_aux();
  }
  const bool marker_allowed = cfg.aux_position == AuxPosition::behind;
  while (produced < max_new_tokens && room()) {
    const int id = pick_token(dec.logits(), marker_allowed && !out.aux);
    out.ids.push_back(id);
    ++produced;
    if (id == kEos) {
      out.stopped_at_eos = true;
      break;
    }
    dec.step(id);
    if (id == kChartMarker) {
      capture_aux();
    } else if (is_text_token(id)) {
      text.push_back(static_cast<char>(id));
    }
  }
  if (cfg.aux_position == AuxPosition::behind && !out.aux && room()) {
    dec.step(kChartMarker);
    capture_aux();
  }
  out.raw_text = std::move(text);
  return out;
}

#define CHARTEX_INSTANTIATE(T)                                                                               \
  template struct Params<T>;                                                                                  \
  template void init_params<T>(Params<T>&, const ModelConfig&, std::uint64_t, GroupSet);                      \
  template Params<T> init_params<T>(const ModelConfig&, std::uint64_t);                                       \
  template Mat<T> patch_matrix<T>(const std::vector<float>&, const ModelConfig&);                             \
  template Mat<T> encode_image<T>(const Params<T>&, const Mat<T>&);                                           \
  template ForwardOutput<T> forward<T>(const Params<T>&, const ModelConfig&, const TokenSequence&,            \
                                       const Mat<T>&);                                                        \
  template RowVec<T> aux_decode<T>(const Params<T>&, const RowVec<T>&);                                       \
  template RowVec<T> aux_backward<T>(const Params<T>&, const RowVec<T>&, const RowVec<T>&, Params<T>&);       \
  template T text_loss<T>(const Mat<T>&, const TokenSequence&);                                               \
  template T number_loss<T>(const RowVec<T>&, const ir::NumericVector&);                                      \
  template Losses<T> loss_and_gradients<T>(const Params<T>&, const ModelConfig&, const TokenSequence&,        \
                                           const Mat<T>&, const ir::NumericVector*, LossKind, T, Params<T>*, \
                                           GroupSet);                                                         \
  template Generation<T> generate<T>(const Params<T>&, const ModelConfig&, const Mat<T>&, int);

CHARTEX_INSTANTIATE(float)
CHARTEX_INSTANTIATE(double)

}  // namespace chartex::tiny
