#pragma once

#include "switchboard/capture_store.hpp"
#include "switchboard/numerics/linear.hpp"
#include "switchboard/numerics/ridge.hpp"
#include "switchboard/tokenizer.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace switchboard::probe {

using tok::TokenId;

enum class Regime : std::uint8_t { Linear = 0, Barely = 1, High = 2, Other = 3 };
const char* regime_name(Regime r);

struct RegimeThresholds {
  int layer = 0;
  std::uint64_t n = 0;
  double p25 = 0, p50 = 0, p70 = 0, p90 = 0, p95 = 0;
};

// Rank-based partition of tokens by norm.  Ties are broken by token index,
// so band sizes are exact: linear = floor(n/4), barely = floor(0.7n) -
// floor(0.5n), high = floor(n/20).
struct RegimeAssignment {
  std::vector<Regime> labels;
  std::vector<std::uint32_t> rank;  // 0 = smallest norm
  RegimeThresholds thresholds;

  std::size_t n() const { return labels.size(); }
  bool in_top(std::size_t i, double fraction) const;
  // floor(5 * rank / n), 0 = lowest-norm fifth.
  int quintile(std::size_t i) const;
  std::size_t count(Regime r) const;
};

RegimeAssignment assign_regimes(std::span<const float> norms, int layer);

// Per-token nonlinearity residuals of one layer: delta = y - (W^T x + b) for
// the least-squares map fitted on every token of the store.
struct DeltaSet {
  int layer = 0;
  num::LinearMap map;
  std::vector<float> norms;
  std::vector<TokenId> tokens;
  RegimeAssignment regimes;
  double mean_norm = 0.0;
};

// Throws InvalidArgument when the store holds fewer than 10 * d_model tokens.
// `jitter` is relative to the mean input variance.
DeltaSet compute_delta(const store::CaptureReader& reader, double jitter = 1e-9);

// Delta vectors (d x n, one column per record) for a block read back from
// the store.
Eigen::MatrixXd deltas_of(const num::LinearMap& map, const store::RecordBlock& block);

void save_delta_set(const DeltaSet& ds, const std::filesystem::path& dir);
DeltaSet load_delta_set(const std::filesystem::path& dir, int layer);

struct TokenFilter {
  std::string description;
  std::vector<std::size_t> indices;  // ascending record indices
};

TokenFilter top_fraction_filter(const DeltaSet& ds, double fraction);
TokenFilter regime_filter(const DeltaSet& ds, Regime r);
TokenFilter token_class_filter(const DeltaSet& ds, const std::vector<TokenId>& ids, std::string description);

// Whitespace-only tokens that contain a newline: paragraph boundaries in
// line-per-paragraph corpora.
std::vector<TokenId> paragraph_boundary_ids(const tok::BpeVocab& vocab);
// Common English function words, space-prefixed, as single-token ids.
std::vector<TokenId> function_word_ids(const tok::BpeVocab& vocab);

struct ProbeOptions {
  int k = 50;              // input PCA width before the feature budget
  int delta_dims = 50;     // compressed delta targets
  double alpha = 1.0;
  double train_fraction = 0.8;
  std::size_t cap = 15000;  // tokens drawn from the filter
  std::uint64_t seed = 0;
  std::int64_t budget = num::kDefaultFeatureBudget;
  int context_radius = 0;  // > 0 appends neighbours' input projections
};

// Filtered, subsampled, split and compressed data for repeated fits.  Rows are
// tokens.  z columns are whitened input PCA coordinates in descending
// variance order, so any leading block is a smaller-k PCA.
struct ProbeData {
  int layer = 0;
  std::string filter;
  ProbeOptions options;
  std::vector<std::size_t> train_records, val_records;
  Eigen::MatrixXd z_train, z_val;
  Eigen::MatrixXd y_train, y_val;          // compressed delta
  Eigen::MatrixXd dir_train, dir_val;      // delta / |delta| in full space
  num::PcaBasis x_pca;
  Eigen::VectorXd z_scale;                 // sqrt(eigenvalue) per input PC
  num::PcaBasis delta_pca;
  std::size_t n_filtered = 0;
};

// Throws InvalidArgument when the filter keeps fewer than `min_tokens`.
ProbeData prepare_probe_data(const store::CaptureReader& reader, const DeltaSet& ds, const TokenFilter& filter,
                             const ProbeOptions& options, std::size_t min_tokens = 200);

struct ProbeResult {
  int layer = 0;
  int degree = 0;
  int k_requested = 0;
  int k_effective = 0;
  double alpha = 0.0;
  double train_r2 = 0.0;
  double val_r2 = 0.0;
  std::string filter;
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t cap = 0;
  Eigen::Index n_features = 0;
  bool dual = false;
};

// Polynomial ridge of the given degree on the leading k_eff input PCs, where
// k_eff = min(k, data width, largest k fitting the feature budget).
ProbeResult fit_probe(const ProbeData& data, int degree, int k, double alpha);

ProbeResult poly_probe(const store::CaptureReader& reader, const DeltaSet& ds, const TokenFilter& filter,
                       int degree, const ProbeOptions& options);

std::vector<ProbeResult> hyperparam_grid(const ProbeData& data, const std::vector<int>& degrees,
                                         const std::vector<int>& ks, const std::vector<double>& alphas);

enum class BranchMethod { KMeansInput, KMeansDeltaDir, KMeansJoint, SpectralDeltaDir };
const char* branch_method_name(BranchMethod m);
BranchMethod parse_branch_method(const std::string& name);

struct BranchOptions {
  int n_clusters = 4;
  int degree = 3;
  int k = 50;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  bool shuffled = false;           // random cluster labels: the null control
  std::size_t min_val_tokens = 50;
  double spectral_sigma_scale = 1.0;
};

struct BranchResult {
  std::string method;
  int n_clusters = 0;
  int k_effective = 0;
  std::vector<std::optional<double>> cluster_val_r2;  // nullopt: too few held-out tokens
  std::vector<double> cluster_train_r2;
  std::vector<std::size_t> cluster_train_n, cluster_val_n;
  double average_val_r2 = 0.0;  // over available clusters
  double best_val_r2 = 0.0;
  double average_train_r2 = 0.0;
  bool shuffled = false;
};

BranchResult branch_detect(const ProbeData& data, BranchMethod method, const BranchOptions& options);

}  // namespace switchboard::probe
