#include "switchboard/assets.hpp"
#include "switchboard/error.hpp"
#include "switchboard/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <iostream>

using namespace switchboard;

namespace {

struct Common {
  pipeline::RunConfig config;
  std::optional<int> layer;
  std::optional<double> threshold;
  std::string mode = "masked";
  bool full = false;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--tokens", c.config.tokens, "Token budget")->check(CLI::PositiveNumber);
  app->add_flag("--full", c.full, "Use the 500,000-token budget");
  app->add_option("--layer", c.layer, "Override the layer each table uses");
  app->add_option("--threshold", c.threshold, "Override the binarization threshold");
  app->add_option("--seed", c.config.seed, "Seed for every sampled quantity");
  app->add_option("--out", c.config.out, "Output directory");
  app->add_option("--model", c.config.model, "Weights container (default: cached GPT-2 Small)");
  app->add_option("--corpus", c.config.corpus, "UTF-8 corpus text (default: cached WikiText-103 raw)");
  app->add_option("--vocab-dir", c.config.vocab_dir, "Directory with vocab.json and merges.txt");
  app->add_option("--profile", c.config.profile, "Neuron profile JSON");
  app->add_option("--threads", c.config.threads, "Worker threads (0 = all cores)");
  app->add_option("--bootstrap", c.config.bootstrap, "Bootstrap resamples for table8");
  app->add_option("--trials", c.config.control_trials, "Random-neuron control trials");
  app->add_option("--clusters", c.config.branch_clusters, "Clusters per branch-detection method");
  app->add_option("--mode", c.mode, "Ablation mode")->check(CLI::IsMember({"masked", "grouped"}));
  app->add_option("--neurons", c.config.capture_neurons, "Hidden neurons stored with each capture");
  app->add_option("--manifest", c.config.manifest, "Asset manifest");
  app->add_option("--cache", c.config.cache, "Asset cache directory (default: $SWITCHBOARD_CACHE)");
  app->add_flag("--offline", c.config.offline, "Never use the network");
  app->add_flag("--quiet", c.quiet, "Only print warnings and results");
}

pipeline::RunConfig finish(Common& c) {
  if (c.quiet) spdlog::set_level(spdlog::level::warn);
  auto cfg = c.config;
  if (c.full) {
    cfg.tokens = pipeline::kFullTokens;
    spdlog::warn("full budget: every captured layer needs about {:.1f} GB of disk",
                 static_cast<double>(cfg.tokens) * 2 * 768 * 4 / 1e9);
  }
  cfg.layer = c.layer;
  cfg.threshold = c.threshold;
  cfg.ablation = c.mode == "grouped" ? causal::AblationMode::Grouped : causal::AblationMode::Masked;
  return cfg;
}

int cmd_fetch(Common& c) {
  const auto cfg = finish(c);
  const auto manifest_path =
      cfg.manifest.empty() ? std::filesystem::path(SWITCHBOARD_ASSET_DIR) / "manifest.json" : cfg.manifest;
  const auto m = assets::Manifest::load(manifest_path);
  const auto cache = cfg.cache.empty() ? assets::cache_dir() : cfg.cache;
  assets::FetchOptions o;
  o.offline = cfg.offline;
  for (const auto& a : m.assets) {
    const auto r = assets::ensure(m, a, cache, o);
    fmt::print("{} {} {}\n", r.downloaded ? "fetched" : "cached ", r.sha256, r.path.string());
  }
  return 0;
}

int cmd_capture(Common& c, const std::vector<int>& layers_in) {
  pipeline::Workspace ws(finish(c));
  std::vector<int> layers = layers_in;
  if (c.layer) layers.push_back(*c.layer);
  if (layers.empty()) {
    for (int l = 0; l < ws.weights().config.n_layers; ++l) layers.push_back(l);
  }
  ws.prepare(layers);
  fmt::print("stores in {}\n", ws.store_dir().string());
  return 0;
}

int cmd_run(Common& c, std::vector<std::string> names) {
  if (names.size() == 1 && names[0] == "all") names = pipeline::table_names();
  pipeline::Workspace ws(finish(c));
  std::vector<report::ReportTable> tables;
  for (const auto& name : names) {
    auto t = pipeline::run_table(name, ws);
    t.write(ws.config().out);
    fmt::print("{}: wrote {}.csv and {}.json\n", name, (ws.config().out / name).string(), name);
    for (const auto& ch : t.checks) {
      fmt::print("  [{}] criterion {}: {}\n", ch.pass ? "PASS" : "FAIL", ch.id, ch.description);
    }
    if (!t.checks_applicable) fmt::print("  pinned expectations not applicable to this model/profile\n");
    tables.push_back(std::move(t));
  }
  report::write_consolidated(ws.config().out, pipeline::table_names());
  return pipeline::exit_code(tables);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"switchboard: GPT-2 MLP routing forensics"};
  app.require_subcommand(1);
  Common common;

  auto* fetch = app.add_subcommand("fetch", "Download and verify the pinned assets");
  add_common(fetch, common);

  std::vector<int> capture_layers;
  auto* capture = app.add_subcommand("capture", "Capture MLP inputs and outputs for the given layers");
  add_common(capture, common);
  capture->add_option("layers", capture_layers, "Layers (default: all)");

  std::vector<std::string> tables;
  auto* run = app.add_subcommand("run", "Run analyses and emit tables");
  add_common(run, common);
  run->add_option("table", tables, fmt::format("Table names or 'all': {}", fmt::join(pipeline::table_names(), ", ")))
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*fetch) return cmd_fetch(common);
    if (*capture) return cmd_capture(common, capture_layers);
    return cmd_run(common, tables);
  } catch (const std::exception& ex) {
    fmt::print(stderr, "error: {}\n", ex.what());
    return 1;
  }
}
