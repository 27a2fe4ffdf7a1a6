#pragma once

#include "switchboard/capture_store.hpp"
#include "switchboard/causal.hpp"
#include "switchboard/model.hpp"
#include "switchboard/probing.hpp"
#include "switchboard/report.hpp"
#include "switchboard/routing.hpp"
#include "switchboard/tokenizer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace switchboard::pipeline {

using tok::TokenId;

inline constexpr std::size_t kMinStatisticsTokens = 10000;
inline constexpr std::size_t kFullTokens = 500000;

struct RunConfig {
  std::filesystem::path manifest;  // asset manifest; empty: the bundled one
  std::filesystem::path cache;     // empty: assets::cache_dir()
  std::filesystem::path model;     // weights container; empty: cached GPT-2 Small
  std::filesystem::path corpus;    // UTF-8 text; empty: cached WikiText-103 raw train split
  std::filesystem::path vocab_dir; // vocab.json + merges.txt; empty: cache
  std::filesystem::path profile;   // empty: the layer-11 profile shipped with the assets
  std::filesystem::path out = "switchboard_out";
  std::size_t tokens = 50000;
  std::optional<int> layer;          // overrides each table's default layer(s)
  std::optional<double> threshold;   // overrides the profile threshold
  std::uint64_t seed = 0;
  int threads = 0;
  int bootstrap = 10000;
  int control_trials = 1000;
  int branch_clusters = 4;
  causal::AblationMode ablation = causal::AblationMode::Masked;
  std::vector<int> capture_neurons;  // hidden subset stored per record
  bool offline = false;

  nlohmann::ordered_json to_json() const;
  // sha256 of the canonical JSON form.
  std::string hash() const;
};

// Lazily resolved assets, token stream, stores and delta sets for one run.
class Workspace {
 public:
  explicit Workspace(RunConfig config);
  ~Workspace();

  const RunConfig& config() const { return config_; }
  const model::ModelWeights& weights();
  const tok::BpeVocab& vocab();
  const routing::Profile& profile();
  double threshold();
  // The first `tokens` corpus tokens, rounded down to whole windows.
  const std::vector<TokenId>& stream();
  std::vector<std::span<const TokenId>> windows();
  int window_length();

  // Captures any missing layers in one pass.
  void prepare(const std::vector<int>& layers);
  const store::CaptureReader& store(int layer);
  const probe::DeltaSet& delta(int layer);
  routing::ActivationSource source(int layer);
  std::filesystem::path store_dir();

  // Ablation records for the profile layer, cached on disk per mode.
  const std::vector<causal::PositionRecord>& ablation(causal::AblationMode mode);
  std::vector<std::uint8_t> consensus_levels();

  // GPT-2 Small with the shipped profile: pinned expectations apply.
  bool reference_run();
  nlohmann::ordered_json provenance(const std::string& mirrors);

 private:
  void require_tokens();

  RunConfig config_;
  std::optional<model::ModelWeights> weights_;
  std::optional<tok::BpeVocab> vocab_;
  std::optional<routing::Profile> profile_;
  std::optional<std::vector<TokenId>> stream_;
  std::string corpus_id_;
  std::map<int, std::unique_ptr<store::CaptureReader>> stores_;
  std::map<int, probe::DeltaSet> deltas_;
  std::map<int, std::vector<causal::PositionRecord>> ablations_;
};

std::vector<std::string> table_names();

// Throws InvalidArgument listing the valid names for an unknown table.
report::ReportTable run_table(const std::string& name, Workspace& ws);

// Exit code contract: 0 matched (or nothing to match), 2 out of tolerance.
int exit_code(const std::vector<report::ReportTable>& tables);

}  // namespace switchboard::pipeline
