#pragma once

#include "switchboard/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace switchboard::causal {

using tok::TokenId;

// Order-independent enough for reporting: Neumaier compensated sum.
class Sum {
 public:
  void add(double v);
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0, comp_ = 0;
};

struct PerplexityResult {
  std::size_t tokens = 0;  // predicted positions (T - 1 per window)
  double mean_loss = 0;
  double perplexity = 0;
};

PerplexityResult perplexity(const model::ModelWeights& w, const std::vector<std::span<const TokenId>>& windows,
                            int threads = 0);

enum class AblationMode {
  Masked,   // one pass per level, ablating only that level's positions
  Grouped,  // one fully ablated pass, losses grouped by level afterwards
};
const char* ablation_mode_name(AblationMode m);

// One predicted position: the loss of token t + 1 read at position t.
struct PositionRecord {
  std::uint8_t level = 0;
  double loss_clean = 0, loss_ablated = 0;
  double kl = 0;          // KL(full || ablated), clamped at 0
  double log_boost = 0;   // log p_full(correct) - log p_ablated(correct)
  double delta_rank = 0;  // rank_full - rank_ablated, 1-based ranks
};

struct CausalOptions {
  int layer = 11;
  AblationMode mode = AblationMode::Masked;
  bool mechanism = true;  // KL / boost / rank need full logit columns
  int threads = 0;
  int logit_block = 128;
};

// `levels` holds one consensus level per token of the concatenated windows.
// Throws InvalidArgument when its length disagrees with the windows.
std::vector<PositionRecord> ablation_records(const model::ModelWeights& w,
                                             const std::vector<std::span<const TokenId>>& windows,
                                             std::span<const std::uint8_t> levels, int n_levels,
                                             const CausalOptions& options);

struct AblationRow {
  std::string level;  // "0".."7" or "All"
  std::size_t count = 0;
  double base_loss = 0, ablated_loss = 0;
  double base_ppl = 0, ablated_ppl = 0;
  double delta_pct = 0;
};

struct MechanismRow {
  std::string level;
  std::size_t count = 0;
  double kl = 0;
  double boost_geometric = 0;
  double boost_arithmetic = 0;
  double delta_rank = 0;
};

std::vector<AblationRow> ablation_report(const std::vector<PositionRecord>& records, int n_levels);
std::vector<MechanismRow> mechanism_report(const std::vector<PositionRecord>& records, int n_levels);

enum class PatchMode { Zero, ClampOn };
const char* patch_mode_name(PatchMode m);

// Per level: the neuron is zeroed (or clamped) only at that level's
// positions, and the losses of those positions are compared with clean.
std::vector<AblationRow> neuron_patch_test(const model::ModelWeights& w,
                                           const std::vector<std::span<const TokenId>>& windows,
                                           std::span<const std::uint8_t> levels, int n_levels, int layer,
                                           int neuron, PatchMode mode, float clamp_value = 1.0f, int threads = 0);

// Replaces the layer's MLP output at masked positions with what `replace`
// returns for the window's MLP input (d x T) and reports the perplexity
// change over masked positions and over all positions.
struct PatchRun {
  std::size_t masked = 0, total = 0;
  double base_ppl_masked = 0, patched_ppl_masked = 0;
  double base_ppl_all = 0, patched_ppl_all = 0;
};

PatchRun replacement_patch(const model::ModelWeights& w, const std::vector<std::span<const TokenId>>& windows,
                           std::span<const std::uint8_t> mask, int layer,
                           const std::function<Eigen::MatrixXf(const Eigen::MatrixXf& mlp_input)>& replace);

}  // namespace switchboard::causal
