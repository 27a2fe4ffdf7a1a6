#pragma once

#include "switchboard/tokenizer.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace switchboard::model {

using tok::TokenId;

struct ModelConfig {
  int n_layers = 12;
  int d_model = 768;
  int d_hidden = 3072;
  int n_heads = 12;
  int n_ctx = 1024;
  int vocab = 50257;

  // Throws InvalidArgument when a dimension is non-positive, d_hidden is not
  // 4 * d_model, or d_model is not divisible by n_heads.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Matrices are held as (out x in) so that y = W * x on column vectors; this
// is the column-major reading of the row-major (in x out) tensors on disk.
// Activations are (features x positions), one column per token.
struct LayerWeights {
  Eigen::VectorXf ln1_g, ln1_b;
  Eigen::MatrixXf w_qkv;  // 3d x d
  Eigen::VectorXf b_qkv;
  Eigen::MatrixXf w_attn_out;  // d x d
  Eigen::VectorXf b_attn_out;
  Eigen::VectorXf ln2_g, ln2_b;
  Eigen::MatrixXf w_in;  // d_hidden x d
  Eigen::VectorXf b_in;
  Eigen::MatrixXf w_out;  // d x d_hidden
  Eigen::VectorXf b_out;
};

struct ModelWeights {
  ModelConfig config;
  Eigen::MatrixXf wte;  // d x vocab, column = token embedding
  Eigen::MatrixXf wpe;  // d x n_ctx
  std::vector<LayerWeights> layers;
  Eigen::VectorXf lnf_g, lnf_b;
  std::string source;  // file path or "random:<seed>"
  std::string sha256;  // of the container's data section, empty for random
};

// Reads the header only.  Layer count, widths and vocabulary come from tensor
// shapes; head count from metadata key "n_head", else d_model / 64.
ModelConfig infer_config(const std::filesystem::path& container);

// Accepts GPT-2 tensor names with or without the "transformer." prefix.
// Errors name the offending tensor: missing, wrong shape, non-finite.
ModelWeights load_weights(const std::filesystem::path& container,
                          const std::optional<ModelConfig>& expected = std::nullopt);

// Writes weights under GPT-2 tensor names, with n_head in the metadata.
void save_weights(const ModelWeights& weights, const std::filesystem::path& container);

// GPT-2 initialisation: N(0, 0.02) for embeddings and projections, residual
// output projections scaled by 1/sqrt(2 * n_layers), zero biases, unit gains.
ModelWeights random_weights(const ModelConfig& config, std::uint64_t seed);

float gelu(float x);
void gelu_inplace(Eigen::Ref<Eigen::MatrixXf> m);

struct HookSpec {
  int layer = 0;
  bool mlp_input = false;
  bool mlp_output = false;
  bool hidden = false;
  bool resid_post = false;   // residual stream after the MLP output is added
  std::vector<int> neurons;  // hidden subset; empty = all
};

enum class InterventionKind { None, AblateMlp, ZeroNeuron, ClampNeuron, ReplaceMlpOutput };

struct Intervention {
  InterventionKind kind = InterventionKind::None;
  int layer = 0;
  int neuron = -1;
  std::vector<std::uint8_t> mask;  // per position; empty = every position
  Eigen::MatrixXf replacement;     // d x T, used where mask is set
  float clamp_value = 0.0f;

  static Intervention none() { return {}; }
  static Intervention ablate_mlp(int layer, std::vector<std::uint8_t> mask = {});
  static Intervention zero_neuron(int layer, int neuron, std::vector<std::uint8_t> mask = {});
  static Intervention clamp_neuron(int layer, int neuron, float value, std::vector<std::uint8_t> mask = {});
  static Intervention replace_mlp_output(int layer, Eigen::MatrixXf replacement,
                                         std::vector<std::uint8_t> mask = {});
};

struct Capture {
  int layer = 0;
  Eigen::MatrixXf mlp_input;   // d x T
  Eigen::MatrixXf mlp_output;  // d x T
  Eigen::MatrixXf hidden;      // |neurons| x T
  Eigen::MatrixXf resid_post;  // d x T
  std::vector<int> neurons;
};

// Residual stream entering the MLP sublayer of `layer` (attention of that
// layer already added), with captures from earlier layers.
struct PrefixState {
  int layer = 0;
  Eigen::MatrixXf resid;
  std::vector<Capture> captures;
};

PrefixState run_prefix(std::span<const TokenId> tokens, const ModelWeights& w, int layer,
                       std::span<const HookSpec> hooks = {});

// Continues from a prefix through the remaining blocks and the final
// layernorm.  Returns the normalised final hidden states (d x T); captures
// from layers >= prefix.layer are appended to `captures`.
Eigen::MatrixXf run_suffix(const PrefixState& prefix, const ModelWeights& w,
                           std::span<const HookSpec> hooks, const Intervention& intervention,
                           std::vector<Capture>* captures = nullptr);

// Logits (vocab x count) for positions first .. first + count - 1.
Eigen::MatrixXf logits_block(const ModelWeights& w, const Eigen::MatrixXf& final_hidden, int first,
                             int count);

struct ForwardResult {
  Eigen::MatrixXf logits;  // vocab x T
  std::vector<Capture> captures;
};

ForwardResult forward(std::span<const TokenId> tokens, const ModelWeights& w,
                      std::span<const HookSpec> hooks = {},
                      const Intervention& intervention = Intervention::none());

// -log softmax(logits[:, t])[tokens[t + 1]] for t = 0..T-2, from full logits.
std::vector<double> next_token_losses(const Eigen::MatrixXf& logits, std::span<const TokenId> tokens);

// Same quantity computed blockwise from final hidden states, never holding
// the full logit matrix.
std::vector<double> next_token_losses_from_hidden(const ModelWeights& w, const Eigen::MatrixXf& final_hidden,
                                                  std::span<const TokenId> tokens, int block = 128);

// Per-column layernorm without gain/bias (exposed for invariant tests).
Eigen::MatrixXf layernorm_normalize(const Eigen::MatrixXf& x, float eps = 1e-5f);

// Column-wise softmax over rows, in place.
void softmax_columns(Eigen::Ref<Eigen::MatrixXf> m);

}  // namespace switchboard::model
