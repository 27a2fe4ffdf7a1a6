#include "switchboard/model.hpp"

#include "switchboard/error.hpp"
#include "switchboard/safetensors.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>
#include <random>

namespace switchboard::model {
namespace {

constexpr float kLnEps = 1e-5f;

std::string layer_name(int l, const char* suffix) { return fmt::format("h.{}.{}", l, suffix); }

class TensorSource {
 public:
  explicit TensorSource(const st::Reader& r) : r_(r) {
    prefix_ = (r.find("wte.weight") == nullptr && r.find("transformer.wte.weight") != nullptr) ? "transformer." : "";
  }

  const st::TensorInfo& info(const std::string& name) const {
    const st::TensorInfo* t = r_.find(prefix_ + name);
    if (!t) throw FormatError(fmt::format("{}: missing tensor '{}'", r_.path().string(), prefix_ + name));
    return *t;
  }

  // Loads a tensor stored as `shape` (row-major) into `m`, which is resized to
  // the column-major reading of that buffer.
  void matrix(const std::string& name, std::int64_t rows_on_disk, std::int64_t cols_on_disk,
              Eigen::MatrixXf& m) const {
    const auto& t = info(name);
    if (t.shape != std::vector<std::int64_t>{rows_on_disk, cols_on_disk}) {
      throw FormatError(fmt::format("tensor '{}': shape {} expected [{}, {}]", t.name, fmt::join(t.shape, "x"),
                                    rows_on_disk, cols_on_disk));
    }
    m.resize(cols_on_disk, rows_on_disk);
    r_.read(t, std::span<float>(m.data(), static_cast<std::size_t>(m.size())));
    check_finite(t.name, m.allFinite());
  }

  void vector(const std::string& name, std::int64_t n, Eigen::VectorXf& v) const {
    const auto& t = info(name);
    if (t.shape != std::vector<std::int64_t>{n}) {
      throw FormatError(fmt::format("tensor '{}': shape {} expected [{}]", t.name, fmt::join(t.shape, "x"), n));
    }
    v.resize(n);
    r_.read(t, std::span<float>(v.data(), static_cast<std::size_t>(v.size())));
    check_finite(t.name, v.allFinite());
  }

  const std::string& prefix() const { return prefix_; }

 private:
  static void check_finite(const std::string& name, bool ok) {
    if (!ok) throw FormatError(fmt::format("tensor '{}' contains non-finite values", name));
  }
  const st::Reader& r_;
  std::string prefix_;
};

void check_mask(const std::vector<std::uint8_t>& mask, std::size_t t) {
  if (!mask.empty() && mask.size() != t) {
    throw InvalidArgument(fmt::format("intervention mask has length {}, sequence has {}", mask.size(), t));
  }
}

bool masked(const std::vector<std::uint8_t>& mask, Eigen::Index t) {
  return mask.empty() || mask[static_cast<std::size_t>(t)] != 0;
}

Eigen::MatrixXf layernorm(const Eigen::MatrixXf& x, const Eigen::VectorXf& g, const Eigen::VectorXf& b) {
  Eigen::MatrixXf y = layernorm_normalize(x, kLnEps);
  y.array().colwise() *= g.array();
  y.colwise() += b;
  return y;
}

void attention_block(Eigen::MatrixXf& resid, const LayerWeights& lw, const ModelConfig& c) {
  const Eigen::Index T = resid.cols();
  const int d = c.d_model;
  const int hd = d / c.n_heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  Eigen::MatrixXf h = layernorm(resid, lw.ln1_g, lw.ln1_b);
  Eigen::MatrixXf qkv = lw.w_qkv * h;
  qkv.colwise() += lw.b_qkv;
  Eigen::MatrixXf out(d, T);
  Eigen::MatrixXf scores(T, T);
  for (int head = 0; head < c.n_heads; ++head) {
    const auto q = qkv.middleRows(head * hd, hd);
    const auto k = qkv.middleRows(d + head * hd, hd);
    const auto v = qkv.middleRows(2 * d + head * hd, hd);
    // scores(s, t): key position s attending from query position t.
    scores.noalias() = k.transpose() * q;
    scores *= scale;
    for (Eigen::Index t = 0; t < T; ++t) {
      auto col = scores.col(t);
      col.tail(T - t - 1).setConstant(-std::numeric_limits<float>::infinity());
    }
    softmax_columns(scores);
    out.middleRows(head * hd, hd).noalias() = v * scores;
  }
  resid.noalias() += lw.w_attn_out * out;
  resid.colwise() += lw.b_attn_out;
}

void mlp_block(Eigen::MatrixXf& resid, const LayerWeights& lw, int layer, std::span<const HookSpec> hooks,
               const Intervention& iv, std::vector<Capture>* captures) {
  const Eigen::Index T = resid.cols();
  Eigen::MatrixXf x = layernorm(resid, lw.ln2_g, lw.ln2_b);
  Eigen::MatrixXf hidden = lw.w_in * x;
  hidden.colwise() += lw.b_in;
  gelu_inplace(hidden);

  const bool here = iv.kind != InterventionKind::None && iv.layer == layer;
  if (here && (iv.kind == InterventionKind::ZeroNeuron || iv.kind == InterventionKind::ClampNeuron)) {
    const float value = iv.kind == InterventionKind::ZeroNeuron ? 0.0f : iv.clamp_value;
    for (Eigen::Index t = 0; t < T; ++t) {
      if (masked(iv.mask, t)) hidden(iv.neuron, t) = value;
    }
  }

  Eigen::MatrixXf y = lw.w_out * hidden;
  y.colwise() += lw.b_out;
  if (here && iv.kind == InterventionKind::AblateMlp) {
    for (Eigen::Index t = 0; t < T; ++t) {
      if (masked(iv.mask, t)) y.col(t).setZero();
    }
  } else if (here && iv.kind == InterventionKind::ReplaceMlpOutput) {
    for (Eigen::Index t = 0; t < T; ++t) {
      if (masked(iv.mask, t)) y.col(t) = iv.replacement.col(t);
    }
  }

  if (captures) {
    for (const auto& hk : hooks) {
      if (hk.layer != layer) continue;
      Capture cap;
      cap.layer = layer;
      if (hk.mlp_input) cap.mlp_input = x;
      if (hk.mlp_output) cap.mlp_output = y;
      if (hk.hidden) {
        if (hk.neurons.empty()) {
          cap.hidden = hidden;
          cap.neurons.resize(static_cast<std::size_t>(hidden.rows()));
          for (std::size_t i = 0; i < cap.neurons.size(); ++i) cap.neurons[i] = static_cast<int>(i);
        } else {
          cap.neurons = hk.neurons;
          cap.hidden.resize(static_cast<Eigen::Index>(hk.neurons.size()), T);
          for (std::size_t i = 0; i < hk.neurons.size(); ++i) {
            cap.hidden.row(static_cast<Eigen::Index>(i)) = hidden.row(hk.neurons[i]);
          }
        }
      }
      captures->push_back(std::move(cap));
    }
  }
  resid += y;
  if (captures) {
    // Captures for this layer are the trailing entries just pushed.
    std::size_t i = captures->size();
    for (auto hk = hooks.rbegin(); hk != hooks.rend(); ++hk) {
      if (hk->layer != layer) continue;
      --i;
      if (hk->resid_post) (*captures)[i].resid_post = resid;
    }
  }
}

void validate_hooks(std::span<const HookSpec> hooks, const ModelConfig& c) {
  for (const auto& h : hooks) {
    if (h.layer < 0 || h.layer >= c.n_layers) {
      throw InvalidArgument(fmt::format("hook layer {} out of range [0, {})", h.layer, c.n_layers));
    }
    for (int n : h.neurons) {
      if (n < 0 || n >= c.d_hidden) {
        throw InvalidArgument(fmt::format("hook neuron {} out of range [0, {})", n, c.d_hidden));
      }
    }
  }
}

void validate_intervention(const Intervention& iv, const ModelConfig& c, Eigen::Index T) {
  if (iv.kind == InterventionKind::None) return;
  if (iv.layer < 0 || iv.layer >= c.n_layers) {
    throw InvalidArgument(fmt::format("intervention layer {} out of range [0, {})", iv.layer, c.n_layers));
  }
  check_mask(iv.mask, static_cast<std::size_t>(T));
  if ((iv.kind == InterventionKind::ZeroNeuron || iv.kind == InterventionKind::ClampNeuron) &&
      (iv.neuron < 0 || iv.neuron >= c.d_hidden)) {
    throw InvalidArgument(fmt::format("intervention neuron {} out of range [0, {})", iv.neuron, c.d_hidden));
  }
  if (iv.kind == InterventionKind::ReplaceMlpOutput &&
      (iv.replacement.rows() != c.d_model || iv.replacement.cols() != T)) {
    throw InvalidArgument(fmt::format("replacement is {}x{}, expected {}x{}", iv.replacement.rows(),
                                      iv.replacement.cols(), c.d_model, T));
  }
}

double column_loss(const Eigen::Ref<const Eigen::VectorXf>& logits, TokenId target) {
  const Eigen::VectorXd col = logits.cast<double>();
  const double mx = col.maxCoeff();
  return mx + std::log((col.array() - mx).exp().sum()) - col(target);
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers <= 0 || d_model <= 0 || d_hidden <= 0 || n_heads <= 0 || n_ctx <= 0 || vocab <= 0) {
    throw InvalidArgument("model config: every dimension must be positive");
  }
  if (d_hidden != 4 * d_model) {
    throw InvalidArgument(fmt::format("model config: d_hidden {} is not 4 * d_model {}", d_hidden, d_model));
  }
  if (d_model % n_heads != 0) {
    throw InvalidArgument(fmt::format("model config: d_model {} not divisible by {} heads", d_model, n_heads));
  }
}

Intervention Intervention::ablate_mlp(int layer, std::vector<std::uint8_t> mask) {
  Intervention iv;
  iv.kind = InterventionKind::AblateMlp;
  iv.layer = layer;
  iv.mask = std::move(mask);
  return iv;
}

Intervention Intervention::zero_neuron(int layer, int neuron, std::vector<std::uint8_t> mask) {
  Intervention iv;
  iv.kind = InterventionKind::ZeroNeuron;
  iv.layer = layer;
  iv.neuron = neuron;
  iv.mask = std::move(mask);
  return iv;
}

Intervention Intervention::clamp_neuron(int layer, int neuron, float value, std::vector<std::uint8_t> mask) {
  Intervention iv = zero_neuron(layer, neuron, std::move(mask));
  iv.kind = InterventionKind::ClampNeuron;
  iv.clamp_value = value;
  return iv;
}

Intervention Intervention::replace_mlp_output(int layer, Eigen::MatrixXf replacement, std::vector<std::uint8_t> mask) {
  Intervention iv;
  iv.kind = InterventionKind::ReplaceMlpOutput;
  iv.layer = layer;
  iv.replacement = std::move(replacement);
  iv.mask = std::move(mask);
  return iv;
}

ModelConfig infer_config(const std::filesystem::path& container) {
  st::Reader r(container);
  TensorSource src(r);
  ModelConfig c;
  const auto& wte = src.info("wte.weight");
  const auto& wpe = src.info("wpe.weight");
  if (wte.shape.size() != 2 || wpe.shape.size() != 2) throw FormatError("embedding tensors must be 2-D");
  c.vocab = static_cast<int>(wte.shape[0]);
  c.d_model = static_cast<int>(wte.shape[1]);
  c.n_ctx = static_cast<int>(wpe.shape[0]);
  c.n_layers = 0;
  while (r.find(src.prefix() + layer_name(c.n_layers, "ln_1.weight")) != nullptr) ++c.n_layers;
  const auto& fc = src.info(layer_name(0, "mlp.c_fc.weight"));
  if (fc.shape.size() != 2) throw FormatError("mlp.c_fc.weight must be 2-D");
  c.d_hidden = static_cast<int>(fc.shape[1]);
  if (auto it = r.metadata().find("n_head"); it != r.metadata().end()) {
    c.n_heads = std::stoi(it->second);
  } else {
    c.n_heads = std::max(1, c.d_model / 64);
  }
  c.validate();
  return c;
}

ModelWeights load_weights(const std::filesystem::path& container, const std::optional<ModelConfig>& expected) {
  const ModelConfig c = infer_config(container);
  if (expected && !(*expected == c)) {
    throw FormatError(fmt::format(
        "{}: container holds {} layers, d_model {}, d_hidden {}, vocab {}, n_ctx {}; expected {}, {}, {}, {}, {}",
        container.string(), c.n_layers, c.d_model, c.d_hidden, c.vocab, c.n_ctx, expected->n_layers,
        expected->d_model, expected->d_hidden, expected->vocab, expected->n_ctx));
  }
  st::Reader r(container);
  TensorSource src(r);
  ModelWeights w;
  w.config = c;
  const int d = c.d_model, h = c.d_hidden;
  src.matrix("wte.weight", c.vocab, d, w.wte);
  src.matrix("wpe.weight", c.n_ctx, d, w.wpe);
  w.layers.resize(static_cast<std::size_t>(c.n_layers));
  for (int l = 0; l < c.n_layers; ++l) {
    auto& lw = w.layers[static_cast<std::size_t>(l)];
    src.vector(layer_name(l, "ln_1.weight"), d, lw.ln1_g);
    src.vector(layer_name(l, "ln_1.bias"), d, lw.ln1_b);
    src.matrix(layer_name(l, "attn.c_attn.weight"), d, 3 * d, lw.w_qkv);
    src.vector(layer_name(l, "attn.c_attn.bias"), 3 * d, lw.b_qkv);
    src.matrix(layer_name(l, "attn.c_proj.weight"), d, d, lw.w_attn_out);
    src.vector(layer_name(l, "attn.c_proj.bias"), d, lw.b_attn_out);
    src.vector(layer_name(l, "ln_2.weight"), d, lw.ln2_g);
    src.vector(layer_name(l, "ln_2.bias"), d, lw.ln2_b);
    src.matrix(layer_name(l, "mlp.c_fc.weight"), d, h, lw.w_in);
    src.vector(layer_name(l, "mlp.c_fc.bias"), h, lw.b_in);
    src.matrix(layer_name(l, "mlp.c_proj.weight"), h, d, lw.w_out);
    src.vector(layer_name(l, "mlp.c_proj.bias"), d, lw.b_out);
  }
  src.vector("ln_f.weight", d, w.lnf_g);
  src.vector("ln_f.bias", d, w.lnf_b);
  w.source = container.string();
  w.sha256 = r.data_sha256();
  spdlog::info("loaded {} ({} layers, d_model {}), data sha256 {}", w.source, c.n_layers, d, w.sha256);
  return w;
}

void save_weights(const ModelWeights& w, const std::filesystem::path& container) {
  std::vector<st::TensorView> views;
  auto mat = [&](std::string name, const Eigen::MatrixXf& m) {
    views.push_back({std::move(name), {m.cols(), m.rows()}, {m.data(), static_cast<std::size_t>(m.size())}});
  };
  auto vec = [&](std::string name, const Eigen::VectorXf& v) {
    views.push_back({std::move(name), {v.size()}, {v.data(), static_cast<std::size_t>(v.size())}});
  };
  mat("wte.weight", w.wte);
  mat("wpe.weight", w.wpe);
  for (int l = 0; l < w.config.n_layers; ++l) {
    const auto& lw = w.layers[static_cast<std::size_t>(l)];
    vec(layer_name(l, "ln_1.weight"), lw.ln1_g);
    vec(layer_name(l, "ln_1.bias"), lw.ln1_b);
    mat(layer_name(l, "attn.c_attn.weight"), lw.w_qkv);
    vec(layer_name(l, "attn.c_attn.bias"), lw.b_qkv);
    mat(layer_name(l, "attn.c_proj.weight"), lw.w_attn_out);
    vec(layer_name(l, "attn.c_proj.bias"), lw.b_attn_out);
    vec(layer_name(l, "ln_2.weight"), lw.ln2_g);
    vec(layer_name(l, "ln_2.bias"), lw.ln2_b);
    mat(layer_name(l, "mlp.c_fc.weight"), lw.w_in);
    vec(layer_name(l, "mlp.c_fc.bias"), lw.b_in);
    mat(layer_name(l, "mlp.c_proj.weight"), lw.w_out);
    vec(layer_name(l, "mlp.c_proj.bias"), lw.b_out);
  }
  vec("ln_f.weight", w.lnf_g);
  vec("ln_f.bias", w.lnf_b);
  st::write(container, views, {{"n_head", std::to_string(w.config.n_heads)}, {"format", "pt"}});
}

ModelWeights random_weights(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 0.02f);
  const float proj_scale = 1.0f / std::sqrt(2.0f * static_cast<float>(c.n_layers));
  auto fill = [&](Eigen::MatrixXf& m, Eigen::Index rows, Eigen::Index cols, float scale) {
    m.resize(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng) * scale;
  };
  const int d = c.d_model, h = c.d_hidden;
  ModelWeights w;
  w.config = c;
  fill(w.wte, d, c.vocab, 1.0f);
  fill(w.wpe, d, c.n_ctx, 1.0f);
  w.layers.resize(static_cast<std::size_t>(c.n_layers));
  for (auto& lw : w.layers) {
    lw.ln1_g = Eigen::VectorXf::Ones(d);
    lw.ln1_b = Eigen::VectorXf::Zero(d);
    fill(lw.w_qkv, 3 * d, d, 1.0f);
    lw.b_qkv = Eigen::VectorXf::Zero(3 * d);
    fill(lw.w_attn_out, d, d, proj_scale);
    lw.b_attn_out = Eigen::VectorXf::Zero(d);
    lw.ln2_g = Eigen::VectorXf::Ones(d);
    lw.ln2_b = Eigen::VectorXf::Zero(d);
    fill(lw.w_in, h, d, 1.0f);
    lw.b_in = Eigen::VectorXf::Zero(h);
    fill(lw.w_out, d, h, proj_scale);
    lw.b_out = Eigen::VectorXf::Zero(d);
  }
  w.lnf_g = Eigen::VectorXf::Ones(d);
  w.lnf_b = Eigen::VectorXf::Zero(d);
  w.source = fmt::format("random:{}", seed);
  return w;
}

float gelu(float x) {
  constexpr float k = 0.7978845608028654f;  // sqrt(2 / pi)
  return 0.5f * x * (1.0f + std::tanh(k * (x + 0.044715f * x * x * x)));
}

void gelu_inplace(Eigen::Ref<Eigen::MatrixXf> m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    float* p = m.col(j).data();
    for (Eigen::Index i = 0; i < m.rows(); ++i) p[i] = gelu(p[i]);
  }
}

Eigen::MatrixXf layernorm_normalize(const Eigen::MatrixXf& x, float eps) {
  Eigen::MatrixXf y(x.rows(), x.cols());
  const float inv_n = 1.0f / static_cast<float>(x.rows());
  for (Eigen::Index t = 0; t < x.cols(); ++t) {
    const auto col = x.col(t);
    const float mean = col.sum() * inv_n;
    const float var = (col.array() - mean).square().sum() * inv_n;
    y.col(t) = (col.array() - mean) / std::sqrt(var + eps);
  }
  return y;
}

void softmax_columns(Eigen::Ref<Eigen::MatrixXf> m) {
  for (Eigen::Index t = 0; t < m.cols(); ++t) {
    auto col = m.col(t);
    const float mx = col.maxCoeff();
    col = (col.array() - mx).exp();
    col /= col.sum();
  }
}

PrefixState run_prefix(std::span<const TokenId> tokens, const ModelWeights& w, int layer,
                       std::span<const HookSpec> hooks) {
  const auto& c = w.config;
  const auto T = static_cast<Eigen::Index>(tokens.size());
  if (T == 0) throw InvalidArgument("forward: empty token sequence");
  if (T > c.n_ctx) throw InvalidArgument(fmt::format("forward: sequence of {} tokens exceeds context {}", T, c.n_ctx));
  if (layer < 0 || layer >= c.n_layers) {
    throw InvalidArgument(fmt::format("forward: layer {} out of range [0, {})", layer, c.n_layers));
  }
  validate_hooks(hooks, c);
  PrefixState s;
  s.layer = layer;
  s.resid.resize(c.d_model, T);
  for (Eigen::Index t = 0; t < T; ++t) {
    const TokenId id = tokens[static_cast<std::size_t>(t)];
    if (id < 0 || id >= c.vocab) {
      throw InvalidArgument(fmt::format("forward: token id {} at position {} out of range [0, {})", id, t, c.vocab));
    }
    s.resid.col(t) = w.wte.col(id) + w.wpe.col(t);
  }
  const Intervention none;
  for (int l = 0; l < layer; ++l) {
    attention_block(s.resid, w.layers[static_cast<std::size_t>(l)], c);
    mlp_block(s.resid, w.layers[static_cast<std::size_t>(l)], l, hooks, none, &s.captures);
  }
  attention_block(s.resid, w.layers[static_cast<std::size_t>(layer)], c);
  return s;
}

Eigen::MatrixXf run_suffix(const PrefixState& prefix, const ModelWeights& w, std::span<const HookSpec> hooks,
                           const Intervention& iv, std::vector<Capture>* captures) {
  const auto& c = w.config;
  validate_hooks(hooks, c);
  validate_intervention(iv, c, prefix.resid.cols());
  if (iv.kind != InterventionKind::None && iv.layer < prefix.layer) {
    throw InvalidArgument(
        fmt::format("intervention at layer {} precedes the prefix split at layer {}", iv.layer, prefix.layer));
  }
  Eigen::MatrixXf resid = prefix.resid;
  mlp_block(resid, w.layers[static_cast<std::size_t>(prefix.layer)], prefix.layer, hooks, iv, captures);
  for (int l = prefix.layer + 1; l < c.n_layers; ++l) {
    attention_block(resid, w.layers[static_cast<std::size_t>(l)], c);
    mlp_block(resid, w.layers[static_cast<std::size_t>(l)], l, hooks, iv, captures);
  }
  return layernorm(resid, w.lnf_g, w.lnf_b);
}

Eigen::MatrixXf logits_block(const ModelWeights& w, const Eigen::MatrixXf& final_hidden, int first, int count) {
  return w.wte.transpose() * final_hidden.middleCols(first, count);
}

ForwardResult forward(std::span<const TokenId> tokens, const ModelWeights& w, std::span<const HookSpec> hooks,
                      const Intervention& iv) {
  const int split = iv.kind == InterventionKind::None ? 0 : iv.layer;
  if (iv.kind != InterventionKind::None) validate_intervention(iv, w.config, static_cast<Eigen::Index>(tokens.size()));
  ForwardResult out;
  PrefixState s = run_prefix(tokens, w, split, hooks);
  out.captures = std::move(s.captures);
  const Eigen::MatrixXf fh = run_suffix(s, w, hooks, iv, &out.captures);
  out.logits = logits_block(w, fh, 0, static_cast<int>(fh.cols()));
  return out;
}

std::vector<double> next_token_losses(const Eigen::MatrixXf& logits, std::span<const TokenId> tokens) {
  if (tokens.size() < 2) throw InvalidArgument("next_token_losses: need at least two tokens");
  if (static_cast<std::size_t>(logits.cols()) != tokens.size()) {
    throw InvalidArgument("next_token_losses: logits and tokens disagree in length");
  }
  std::vector<double> loss(tokens.size() - 1);
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    loss[t] = column_loss(logits.col(static_cast<Eigen::Index>(t)), tokens[t + 1]);
  }
  return loss;
}

std::vector<double> next_token_losses_from_hidden(const ModelWeights& w, const Eigen::MatrixXf& final_hidden,
                                                  std::span<const TokenId> tokens, int block) {
  const int T = static_cast<int>(final_hidden.cols());
  if (static_cast<std::size_t>(T) != tokens.size()) {
    throw InvalidArgument("next_token_losses: hidden states and tokens disagree in length");
  }
  if (T < 2) throw InvalidArgument("next_token_losses: need at least two tokens");
  std::vector<double> loss;
  loss.reserve(static_cast<std::size_t>(T - 1));
  for (int first = 0; first < T - 1; first += block) {
    const int count = std::min(block, T - 1 - first);
    const Eigen::MatrixXf lg = logits_block(w, final_hidden, first, count);
    for (int j = 0; j < count; ++j) {
      loss.push_back(column_loss(lg.col(j), tokens[static_cast<std::size_t>(first + j + 1)]));
    }
  }
  return loss;
}

}  // namespace switchboard::model
