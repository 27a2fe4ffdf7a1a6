#pragma once

#include "switchboard/capture_store.hpp"
#include "switchboard/model.hpp"
#include "switchboard/numerics/classify.hpp"
#include "switchboard/numerics/stats.hpp"
#include "switchboard/probing.hpp"
#include "switchboard/tokenizer.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace switchboard::routing {

using probe::Regime;
using tok::TokenId;

// Neuron ids, threshold and seeds pinned for one layer.
struct Profile {
  int layer = 11;
  int handler = 2123;
  std::vector<int> consensus{2, 2361, 2460, 2928, 1831, 1245, 2600};
  std::vector<int> pattern_neurons{458, 2600, 2032, 2821, 1010, 3, 309, 1829};
  // Which shift ranks pattern neurons when they are re-derived:
  // "barely_vs_linear" or "high_vs_linear".
  std::string pattern_ranking = "barely_vs_linear";
  double threshold = 0.1;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static Profile from_json(const nlohmann::json& j);
  static Profile load(const std::filesystem::path& path);
};

struct MlpInWeights {
  Eigen::MatrixXf w_in;  // hidden x d
  Eigen::VectorXf b_in;
  static MlpInWeights from_model(const model::ModelWeights& w, int layer);
};

// Post-GELU hidden activations for the tokens of one store: recomputed from
// the stored MLP input when the layer's input weights are given, otherwise
// read from the stored neuron subset.
class ActivationSource {
 public:
  ActivationSource(const store::CaptureReader& reader, std::optional<MlpInWeights> weights);

  std::size_t n_tokens() const { return reader_->size(); }
  // Every neuron this source can produce, ascending.
  const std::vector<int>& neuron_ids() const { return ids_; }
  std::optional<float> bias(int neuron) const;

  // |neurons| x n_tokens.  Throws InvalidArgument naming the first neuron
  // that is neither stored nor recomputable.
  Eigen::MatrixXf activations(const std::vector<int>& neurons) const;
  // Sequential pass; `hidden` rows follow neuron_ids().
  void scan(const std::function<void(std::size_t first, const Eigen::MatrixXf& hidden)>& fn) const;
  // ||MLP output|| per token.
  std::vector<float> output_norms() const;

 private:
  const store::CaptureReader* reader_;
  std::optional<MlpInWeights> weights_;
  std::vector<int> ids_;
};

struct NeuronStat {
  int neuron = 0;
  double rate_linear = 0, rate_barely = 0, rate_high = 0, rate_overall = 0;
  double delta_pp = 0;  // (high - linear) * 100
  std::optional<float> bias;
};

std::vector<NeuronStat> firing_stats(const ActivationSource& source, const probe::RegimeAssignment& regimes,
                                     double threshold = 0.1);

// Sorted by |rate(to) - rate(from)| descending, ties by neuron id.
std::vector<NeuronStat> rank_by_shift(std::vector<NeuronStat> stats, Regime from, Regime to);

// Token x neuron bits: activation > threshold.
num::BinaryMatrix binarize(const Eigen::MatrixXf& activations, double threshold);

struct ConsensusProfile {
  int handler = 0;
  std::vector<int> consensus;
  double threshold = 0.0;
  std::vector<std::uint8_t> handler_bit;  // per token
  num::BinaryMatrix consensus_bits;       // tokens x |consensus|
  std::vector<std::uint8_t> count;        // consensus neurons firing per token

  std::size_t n() const { return count.size(); }
  int levels() const { return static_cast<int>(consensus.size()) + 1; }
};

// `activations` rows: handler first, then the consensus neurons in order.
ConsensusProfile make_profile(const Eigen::MatrixXf& activations, int handler, const std::vector<int>& consensus,
                              double threshold);
ConsensusProfile make_profile(const ActivationSource& source, int handler, const std::vector<int>& consensus,
                              double threshold);

struct ExclusivityRow {
  int a = 0, b = 0;
  std::int64_t both = 0, either = 0;
  double exclusivity = 0;
  double chi2 = 0;  // NaN when a marginal is empty
};

std::vector<ExclusivityRow> exclusivity_table(const ConsensusProfile& profile);

struct GradientRow {
  int c = 0;
  std::size_t count = 0;
  double percent = 0;
  double handler_rate = 0;  // NaN when empty
  double mean_norm = 0;     // NaN when empty
  bool empty = true;
};

// Scalar summary of one consensus gradient; also what each control trial
// computes.
struct GradientSummary {
  double range_pp = 0;    // max - min handler rate over non-empty levels
  double norm_ratio = 0;  // mean norm at c = 0 over c = max
  double exclusivity = 0; // mean over handler/consensus pairs
  bool handler_monotone = false;  // strictly decreasing over non-empty levels
  bool norm_monotone = false;
};

struct GradientBootstrap {
  int resamples = 0;
  std::uint64_t seed = 0;
  num::BootstrapCi range_pp, norm_ratio, exclusivity;
  double monotone_fraction = 0;  // resamples where both columns stay strictly decreasing
};

struct ConsensusGradient {
  std::vector<GradientRow> rows;
  GradientSummary summary;
  std::optional<GradientBootstrap> bootstrap;
};

std::vector<GradientRow> gradient_rows(const ConsensusProfile& profile, std::span<const float> norms,
                                       std::span<const std::size_t> tokens = {});
GradientSummary summarize(const ConsensusProfile& profile, std::span<const float> norms,
                          std::span<const std::size_t> tokens = {});
ConsensusGradient consensus_gradient(const ConsensusProfile& profile, std::span<const float> norms,
                                     int bootstrap_resamples = 10000, std::uint64_t seed = 0);

struct ThresholdRow {
  double threshold = 0;
  GradientSummary summary;
};

// `activations` rows as for make_profile.
std::vector<ThresholdRow> threshold_sweep(const Eigen::MatrixXf& activations, int handler,
                                          const std::vector<int>& consensus, std::span<const float> norms,
                                          const std::vector<double>& thresholds = {0.01, 0.05, 0.1, 0.5, 1.0});

struct ControlOptions {
  int trials = 1000;
  std::uint64_t seed = 0;
  int consensus_size = 7;
  double high_min_rate = 0.5;   // consensus candidates: overall rate above this
  double low_min_rate = 0.01;   // handler candidates: overall rate within [low_min, low_max]
  double low_max_rate = 0.10;
  // When set, trial 0 uses these ids (handler first) instead of a random draw.
  std::optional<std::vector<int>> inject;
};

struct RandomNeuronControl {
  std::size_t eligible_high = 0, eligible_low = 0;
  std::vector<GradientSummary> trials;
  std::vector<std::vector<int>> trial_ids;  // handler first
  GradientSummary real;
  int beat_range = 0, beat_norm_ratio = 0, beat_exclusivity = 0;  // strictly greater than real
  double best_range_pp = 0;
};

RandomNeuronControl random_neuron_control(const ActivationSource& source, const std::vector<NeuronStat>& stats,
                                          std::span<const float> norms, const GradientSummary& real,
                                          double threshold, const ControlOptions& options);

struct RandomWeightControl {
  std::uint64_t seed = 0;
  std::size_t tokens = 0;
  ConsensusGradient gradient;
};

// Fresh GPT-2 initialisation (sigma 0.02) run over `windows`; the same
// neuron ids are binarised at the profile's layer.
RandomWeightControl random_weight_control(const model::ModelConfig& config, std::uint64_t seed,
                                          const std::vector<std::span<const TokenId>>& windows,
                                          const Profile& profile, int bootstrap_resamples = 0);

struct PatternStat {
  std::uint32_t pattern = 0;
  std::string bits;  // character i is neuron i of the pattern set
  std::size_t barely = 0, linear = 0;
  double enrichment = 0;  // (barely / n_barely) / ((linear + 1) / n_linear)
  std::vector<std::string> examples;
};

struct EnrichmentReport {
  std::vector<int> neurons;
  std::size_t n_barely = 0, n_linear = 0;
  std::vector<PatternStat> top;
  std::vector<int> appearances;  // per neuron: top patterns where it fires
  std::optional<int> gateway;    // neuron firing in >= gateway_min of the top patterns
  int gateway_appearances = 0;
  double aggregate = 0;          // unsmoothed enrichment of all patterns together
};

struct EnrichmentOptions {
  int top = 20;
  int gateway_min = 15;
  int examples = 3;
};

// `bits` is tokens x neurons (at most 32 neurons).
EnrichmentReport pattern_enrichment(const num::BinaryMatrix& bits, const std::vector<int>& neurons,
                                    const probe::RegimeAssignment& regimes, std::span<const TokenId> tokens,
                                    const tok::BpeVocab* vocab, const EnrichmentOptions& options = {});

struct BinaryVsContinuous {
  double binary_accuracy = 0, continuous_accuracy = 0, base_rate = 0;
  double binary_r2 = 0, continuous_r2 = 0;
  std::size_t n_train = 0, n_val = 0;
};

// Labels: top 25% of |delta| vs the rest.  Regression target: ||MLP output||.
BinaryVsContinuous binary_vs_continuous(const Eigen::MatrixXf& activations, double threshold,
                                        const probe::RegimeAssignment& regimes, std::span<const float> norms,
                                        std::uint64_t seed, bool shuffle_labels = false);

struct TreeValidation {
  double binary_accuracy = 0, binary_baseline = 0;
  double five_accuracy = 0, five_baseline = 0;
  int binary_depth = 3, five_depth = 5;
  std::size_t n_train = 0, n_val = 0;
};

// Binary task: top 25% of |delta| (needs the MLP) vs the rest.  Five-class
// task: |delta| quintile.
TreeValidation tree_validation(const num::BinaryMatrix& bits, const probe::RegimeAssignment& regimes,
                               std::uint64_t seed, int binary_depth = 3, int five_depth = 5);

struct DetectionRules {
  double exception_max_linear = 0.05;
  double exception_min_high = 0.50;
  double consensus_max_delta_pp = -40.0;
  double consensus_min_linear = 0.70;
  int consensus_max = 7;
  int pattern_neurons = 8;
  EnrichmentOptions enrichment;
};

struct LayerScan {
  int layer = 0;
  double mean_delta = 0;
  std::optional<int> exception;
  double exception_rate = 0;  // overall
  std::vector<int> consensus;
  double exclusivity = 0;  // NaN without exception or consensus
  std::optional<int> gateway;
  int gateway_appearances = 0;
  bool monotone = false;
  std::string phase;
};

std::optional<int> detect_exception(const std::vector<NeuronStat>& stats, const DetectionRules& rules);
std::vector<int> detect_consensus(const std::vector<NeuronStat>& stats, const DetectionRules& rules);
// Decision: exception, monotone gradient, and a gateway or >= 2 consensus
// neurons.  Diffuse: neither exception nor gateway.  Scaffold otherwise.
std::string phase_label(const LayerScan& row);

LayerScan scan_layer(const ActivationSource& source, const probe::DeltaSet& ds, double threshold,
                     const DetectionRules& rules = {});

}  // namespace switchboard::routing
