#pragma once

#include "switchboard/capture_store.hpp"
#include "switchboard/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <vector>

namespace switchboard::capture {

using tok::TokenId;

// Contiguous non-overlapping windows over one token stream.  Only full
// windows are kept, so the token count is a multiple of `window`.
std::vector<std::span<const TokenId>> make_windows(std::span<const TokenId> stream, int window,
                                                   std::size_t token_budget);

struct Options {
  std::vector<int> layers;
  int window = 1024;
  std::size_t token_budget = 50000;
  std::vector<int> neurons;  // hidden subset stored per record, same for every layer
  int threads = 0;           // 0 = hardware concurrency
  nlohmann::json provenance = nlohmann::json::object();
};

struct Summary {
  std::size_t windows = 0;
  std::size_t tokens = 0;
};

// Runs the model over the windows and writes one store per layer in `dir`.
// Stores appear only once complete.
Summary capture_layers(const model::ModelWeights& weights, std::span<const TokenId> stream, const Options& options,
                       const std::filesystem::path& dir);

}  // namespace switchboard::capture
