#include "switchboard/capture.hpp"

#include "switchboard/error.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <future>
#include <memory>
#include <thread>

namespace switchboard::capture {

std::vector<std::span<const TokenId>> make_windows(std::span<const TokenId> stream, int window,
                                                   std::size_t token_budget) {
  if (window <= 0) throw InvalidArgument("window length must be positive");
  const auto w = static_cast<std::size_t>(window);
  const std::size_t usable = std::min(stream.size(), token_budget);
  std::vector<std::span<const TokenId>> out;
  for (std::size_t first = 0; first + w <= usable; first += w) out.push_back(stream.subspan(first, w));
  return out;
}

Summary capture_layers(const model::ModelWeights& weights, std::span<const TokenId> stream, const Options& options,
                       const std::filesystem::path& dir) {
  if (options.layers.empty()) throw InvalidArgument("capture: no layers requested");
  const auto& cfg = weights.config;
  if (options.window > cfg.n_ctx) {
    throw InvalidArgument(fmt::format("capture: window {} exceeds context {}", options.window, cfg.n_ctx));
  }
  std::vector<int> sorted = options.layers;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw InvalidArgument("capture: layer listed twice");
  }
  std::vector<model::HookSpec> hooks;
  for (int l : options.layers) {
    if (l < 0 || l >= cfg.n_layers) throw InvalidArgument(fmt::format("capture: layer {} out of range", l));
    model::HookSpec h;
    h.layer = l;
    h.mlp_input = h.mlp_output = true;
    h.hidden = !options.neurons.empty();
    h.neurons = options.neurons;
    hooks.push_back(h);
  }
  const auto windows = make_windows(stream, options.window, options.token_budget);
  if (windows.empty()) {
    throw InvalidArgument(fmt::format("capture: {} tokens do not fill one {}-token window",
                                      std::min(stream.size(), options.token_budget), options.window));
  }
  const int last = *std::max_element(options.layers.begin(), options.layers.end());

  std::vector<std::unique_ptr<store::CaptureWriter>> writers;
  for (int l : options.layers) {
    writers.push_back(std::make_unique<store::CaptureWriter>(dir, l, cfg.d_model, options.neurons, options.provenance));
  }

  auto run_window = [&](std::size_t wi) {
    const auto tokens = windows[wi];
    auto prefix = model::run_prefix(tokens, weights, last, hooks);
    std::vector<model::Capture> caps = std::move(prefix.captures);
    prefix.captures.clear();
    model::run_suffix(prefix, weights, hooks, model::Intervention::none(), &caps);
    return caps;
  };

  const unsigned threads = options.threads > 0 ? static_cast<unsigned>(options.threads)
                                               : std::max(1u, std::thread::hardware_concurrency());
  for (std::size_t begin = 0; begin < windows.size(); begin += threads) {
    const std::size_t end = std::min(windows.size(), begin + threads);
    std::vector<std::future<std::vector<model::Capture>>> jobs;
    for (std::size_t wi = begin; wi < end; ++wi) jobs.push_back(std::async(std::launch::async, run_window, wi));
    for (std::size_t wi = begin; wi < end; ++wi) {
      auto caps = jobs[wi - begin].get();
      for (auto& cap : caps) {
        const auto pos = std::find(options.layers.begin(), options.layers.end(), cap.layer) - options.layers.begin();
        store::CaptureChunk chunk;
        chunk.layer = cap.layer;
        chunk.window = static_cast<std::uint32_t>(wi);
        chunk.tokens.assign(windows[wi].begin(), windows[wi].end());
        chunk.x = std::move(cap.mlp_input);
        chunk.y = std::move(cap.mlp_output);
        chunk.hidden = std::move(cap.hidden);
        writers[static_cast<std::size_t>(pos)]->append(chunk);
      }
    }
    spdlog::debug("capture: {}/{} windows", end, windows.size());
  }
  for (auto& w : writers) w->finish();
  return {windows.size(), windows.size() * static_cast<std::size_t>(options.window)};
}

}  // namespace switchboard::capture
