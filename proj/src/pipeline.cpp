#include "switchboard/pipeline.hpp"

#include "switchboard/assets.hpp"
#include "switchboard/capture.hpp"
#include "switchboard/error.hpp"
#include "switchboard/safetensors.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>

namespace switchboard::pipeline {
namespace fs = std::filesystem;
using report::Cell;
using report::ReportTable;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Cell integer(std::size_t v) { return static_cast<std::int64_t>(v); }
Cell opt_neuron(const std::optional<int>& n) {
  if (!n) return std::monostate{};
  return static_cast<std::int64_t>(*n);
}

std::string sha256_text(const std::string& s) {
  return st::sha256_hex(std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

// Strictly decreasing, tolerating at most one adjacent rise no larger than
// `slack`.
bool decreasing_with_slack(const std::vector<double>& v, double slack) {
  int rises = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] < v[i - 1])) {
      if (!(v[i] - v[i - 1] <= slack)) return false;
      ++rises;
    }
  }
  return rises <= 1;
}

bool strictly_increasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] > v[i - 1])) return false;
  }
  return true;
}

std::string join_ids(const std::vector<int>& ids) { return fmt::format("{}", fmt::join(ids, " ")); }

ReportTable make_table(Workspace& ws, std::string name, std::string title, std::vector<std::string> columns,
                       const std::string& mirrors) {
  ReportTable t;
  t.name = std::move(name);
  t.title = std::move(title);
  t.columns = std::move(columns);
  t.provenance = ws.provenance(mirrors);
  t.checks_applicable = ws.reference_run();
  return t;
}

int profile_layer(Workspace& ws) { return ws.config().layer.value_or(ws.profile().layer); }

routing::Profile active_profile(Workspace& ws) {
  auto p = ws.profile();
  p.layer = profile_layer(ws);
  p.threshold = ws.threshold();
  return p;
}

std::vector<int> pattern_neurons(Workspace& ws, const routing::ActivationSource& src,
                                 const probe::DeltaSet& ds) {
  const auto& p = ws.profile();
  if (!p.pattern_neurons.empty()) return p.pattern_neurons;
  const auto to = p.pattern_ranking == "high_vs_linear" ? probe::Regime::High : probe::Regime::Barely;
  const auto ranked = routing::rank_by_shift(routing::firing_stats(src, ds.regimes, ws.threshold()),
                                             probe::Regime::Linear, to);
  std::vector<int> ids;
  for (std::size_t i = 0; i < ranked.size() && ids.size() < 8; ++i) ids.push_back(ranked[i].neuron);
  return ids;
}

// ---------------------------------------------------------------- probing

ReportTable table1(Workspace& ws) {
  auto t = make_table(ws, "table1", "Polynomial R2 on high-delta tokens (top 10%)",
                      {"layer", "filter", "degree", "k_effective", "alpha", "train_r2", "val_r2", "n_train", "n_val"},
                      "Table 1");
  const std::vector<int> layers = ws.config().layer ? std::vector<int>{*ws.config().layer} : std::vector<int>{9, 11};
  ws.prepare(layers);
  std::map<std::pair<int, int>, double> val;
  bool train_ge_val = true;
  probe::ProbeOptions po;
  po.seed = ws.config().seed;
  for (int layer : layers) {
    const auto& ds = ws.delta(layer);
    const auto data = probe::prepare_probe_data(ws.store(layer), ds, probe::top_fraction_filter(ds, 0.10), po);
    for (int degree = 2; degree <= 7; ++degree) {
      const auto r = probe::fit_probe(data, degree, po.k, po.alpha);
      t.add_row({static_cast<std::int64_t>(layer), r.filter, static_cast<std::int64_t>(degree),
                 static_cast<std::int64_t>(r.k_effective), r.alpha, r.train_r2, r.val_r2, integer(r.n_train),
                 integer(r.n_val)});
      val[{layer, degree}] = r.val_r2;
      train_ge_val = train_ge_val && r.train_r2 >= r.val_r2;
    }
  }
  // Paragraph-boundary class at the deepest requested layer.
  const int deep = layers.back();
  std::optional<double> para;
  try {
    const auto& ds = ws.delta(deep);
    const auto filter = probe::token_class_filter(ds, probe::paragraph_boundary_ids(ws.vocab()), "paragraph_boundary");
    const auto r = probe::poly_probe(ws.store(deep), ds, filter, 3, po);
    t.add_row({static_cast<std::int64_t>(deep), r.filter, std::int64_t{3}, static_cast<std::int64_t>(r.k_effective),
               r.alpha, r.train_r2, r.val_r2, integer(r.n_train), integer(r.n_val)});
    para = r.val_r2;
  } catch (const InvalidArgument& ex) {
    spdlog::warn("paragraph-boundary probe skipped: {}", ex.what());
    t.summary["paragraph_boundary"] = ex.what();
  }
  if (t.checks_applicable) {
    t.check("4", "L9 degree-2 validation R2 = 0.062 +- 0.03", std::abs(val[{9, 2}] - 0.062) <= 0.03);
    t.check("4", "L9 degree-3 validation R2 = 0.041 +- 0.03", std::abs(val[{9, 3}] - 0.041) <= 0.03);
    t.check("4", "L11 degree-4 validation R2 = 0.260 +- 0.05", std::abs(val[{11, 4}] - 0.260) <= 0.05);
    bool l9 = true;
    for (int d = 2; d <= 7; ++d) l9 = l9 && val[{9, d}] <= 0.10;
    t.check("4", "no L9 degree exceeds 0.10", l9);
    t.check("4", "train R2 >= validation R2 on every probe", train_ge_val);
    t.check("para", "L11 paragraph-boundary cubic validation R2 = 0.45 +- 0.1", para && std::abs(*para - 0.45) <= 0.1);
  }
  return t;
}

ReportTable table2(Workspace& ws) {
  auto t = make_table(ws, "table2", "Branch detection: polynomial R2 after clustering high-delta tokens",
                      {"layer", "filter", "method", "clusters", "available", "avg_val_r2", "best_val_r2",
                       "avg_train_r2"},
                      "Table 2");
  const int layer = ws.config().layer.value_or(9);
  const auto& ds = ws.delta(layer);
  probe::ProbeOptions po;
  po.seed = ws.config().seed;
  const auto data = probe::prepare_probe_data(ws.store(layer), ds, probe::top_fraction_filter(ds, 0.10), po);
  auto add = [&](const std::string& filter, const probe::BranchResult& r) {
    std::size_t available = 0;
    for (const auto& c : r.cluster_val_r2) available += c.has_value();
    t.add_row({static_cast<std::int64_t>(layer), filter, r.method + (r.shuffled ? " (shuffled)" : ""),
               static_cast<std::int64_t>(r.n_clusters), integer(available), r.average_val_r2, r.best_val_r2,
               r.average_train_r2});
  };
  probe::BranchOptions bo;
  bo.n_clusters = ws.config().branch_clusters;
  bo.seed = ws.config().seed;
  bool all_ok = true;
  for (auto m : {probe::BranchMethod::KMeansInput, probe::BranchMethod::KMeansDeltaDir, probe::BranchMethod::KMeansJoint,
                 probe::BranchMethod::SpectralDeltaDir}) {
    const auto r = probe::branch_detect(data, m, bo);
    add(data.filter, r);
    all_ok = all_ok && r.average_val_r2 <= 0.02 && r.best_val_r2 <= 0.06;
  }
  auto null_opts = bo;
  null_opts.shuffled = true;
  const auto null = probe::branch_detect(data, probe::BranchMethod::KMeansInput, null_opts);
  add(data.filter, null);
  t.summary["shuffled_avg_val_r2"] = null.average_val_r2;

  // Function words split into 2..16 groups.
  try {
    const auto fw = probe::token_class_filter(ds, probe::function_word_ids(ws.vocab()), "function_words");
    const auto fdata = probe::prepare_probe_data(ws.store(layer), ds, fw, po);
    for (int k : {2, 4, 8, 16}) {
      auto o = bo;
      o.n_clusters = k;
      add(fdata.filter, probe::branch_detect(fdata, probe::BranchMethod::KMeansInput, o));
    }
  } catch (const InvalidArgument& ex) {
    spdlog::warn("function-word sub-clustering skipped: {}", ex.what());
    t.summary["function_words"] = ex.what();
  }
  if (t.checks_applicable) {
    t.check("5", "every method: average validation R2 <= 0.02 and best cluster <= 0.06", all_ok);
    t.check("5", "shuffled-label null: average validation R2 <= 0.02", null.average_val_r2 <= 0.02);
  }
  return t;
}

ReportTable table10(Workspace& ws) {
  auto t = make_table(ws, "table10", "Polynomial R2 sensitivity to PCA width and ridge alpha (degree 3)",
                      {"layer", "k", "k_effective", "alpha", "train_r2", "val_r2"}, "Table 10");
  const int layer = ws.config().layer.value_or(9);
  const auto& ds = ws.delta(layer);
  probe::ProbeOptions po;
  po.seed = ws.config().seed;
  po.k = 100;
  const auto data = probe::prepare_probe_data(ws.store(layer), ds, probe::top_fraction_filter(ds, 0.10), po);
  const std::vector<int> ks{10, 20, 50, 100};
  const auto grid = probe::hyperparam_grid(data, {3}, ks, {0.1, 1.0, 10.0, 100.0});
  double max_val = -INFINITY, k20 = kNaN;
  for (const auto& r : grid) {
    t.add_row({static_cast<std::int64_t>(layer), static_cast<std::int64_t>(r.k_requested),
               static_cast<std::int64_t>(r.k_effective), r.alpha, r.train_r2, r.val_r2});
    max_val = std::max(max_val, r.val_r2);
    if (r.k_requested == 20 && r.alpha == 1.0) k20 = r.val_r2;
  }
  if (t.checks_applicable) {
    t.check("table10", "L9 degree 3, k=20, alpha=1: validation R2 = 0.043 +- 0.03", std::abs(k20 - 0.043) <= 0.03);
    t.check("table10", "no configuration exceeds R2 = 0.07", max_val <= 0.07);
  }
  return t;
}

// ---------------------------------------------------------------- routing

ReportTable table3(Workspace& ws) {
  auto t = make_table(ws, "table3", "Largest firing-rate shifts between linear and highly nonlinear tokens",
                      {"neuron", "role", "linear_pct", "barely_pct", "high_pct", "overall_pct", "delta_pp", "bias"},
                      "Table 3");
  const int layer = profile_layer(ws);
  const auto src = ws.source(layer);
  const auto stats = routing::firing_stats(src, ws.delta(layer).regimes, ws.threshold());
  const auto ranked = routing::rank_by_shift(stats, probe::Regime::Linear, probe::Regime::High);
  const auto& p = ws.profile();
  auto role = [&](int n) -> std::string {
    if (n == p.handler) return "handler";
    if (std::find(p.consensus.begin(), p.consensus.end(), n) != p.consensus.end()) return "consensus";
    return "";
  };
  std::vector<const routing::NeuronStat*> shown;
  for (std::size_t i = 0; i < ranked.size() && shown.size() < 10; ++i) shown.push_back(&ranked[i]);
  for (const auto& s : ranked) {
    if (!role(s.neuron).empty() && std::find(shown.begin(), shown.end(), &s) == shown.end()) shown.push_back(&s);
  }
  const routing::NeuronStat* handler = nullptr;
  for (const auto* s : shown) {
    t.add_row({static_cast<std::int64_t>(s->neuron), role(s->neuron), s->rate_linear * 100, s->rate_barely * 100,
               s->rate_high * 100, s->rate_overall * 100, s->delta_pp,
               s->bias ? Cell(static_cast<double>(*s->bias)) : Cell(std::monostate{})});
    if (s->neuron == p.handler) handler = s;
  }
  if (handler) t.summary["handler_overall_pct"] = handler->rate_overall * 100;
  if (t.checks_applicable) {
    t.check("6", "handler high-regime rate >= 70%", handler && handler->rate_high >= 0.70);
    t.check("6", "handler linear-regime rate <= 2%", handler && handler->rate_linear <= 0.02);
  }
  return t;
}

ReportTable table4(Workspace& ws) {
  auto t = make_table(ws, "table4", "Mutual exclusivity between the exception handler and the consensus neurons",
                      {"handler", "neuron", "both", "either", "exclusivity_pct", "chi2"}, "Table 4");
  const int layer = profile_layer(ws);
  const auto& p = ws.profile();
  const auto prof = routing::make_profile(ws.source(layer), p.handler, p.consensus, ws.threshold());
  bool excl = true, chi = true;
  for (const auto& r : routing::exclusivity_table(prof)) {
    t.add_row({static_cast<std::int64_t>(r.a), static_cast<std::int64_t>(r.b), r.both, r.either, r.exclusivity * 100,
               r.chi2});
    excl = excl && r.exclusivity >= 0.90;
    chi = chi && r.chi2 > 1000;
  }
  if (t.checks_applicable) {
    t.check("6", "every pair exclusivity >= 90%", excl);
    t.check("6", "every pair chi-square > 1,000", chi);
  }
  return t;
}

std::vector<int> handler_and_consensus(const routing::Profile& p) {
  std::vector<int> ids{p.handler};
  ids.insert(ids.end(), p.consensus.begin(), p.consensus.end());
  return ids;
}

ReportTable table5(Workspace& ws) {
  auto t = make_table(ws, "table5", "Consensus structure at five binarization thresholds",
                      {"threshold", "exclusivity_pct", "range_pp", "norm_ratio", "handler_monotone", "norm_monotone"},
                      "Table 5");
  const int layer = profile_layer(ws);
  const auto& p = ws.profile();
  const auto src = ws.source(layer);
  const auto acts = src.activations(handler_and_consensus(p));
  const auto norms = src.output_norms();
  std::vector<double> excl, range;
  bool monotone = true;
  for (const auto& r : routing::threshold_sweep(acts, p.handler, p.consensus, norms)) {
    t.add_row({r.threshold, r.summary.exclusivity * 100, r.summary.range_pp, r.summary.norm_ratio,
               r.summary.handler_monotone, r.summary.norm_monotone});
    excl.push_back(r.summary.exclusivity);
    range.push_back(r.summary.range_pp);
    monotone = monotone && r.summary.handler_monotone;
  }
  if (t.checks_applicable) {
    t.check("8", "handler gradient monotone at all five thresholds", monotone);
    t.check("8", "exclusivity increases with threshold", strictly_increasing(excl));
    std::vector<double> neg(range.size());
    std::transform(range.begin(), range.end(), neg.begin(), [](double v) { return -v; });
    t.check("8", "rate range decreases with threshold", strictly_increasing(neg));
    t.check("8", "range >= 85pp at 0.01 and <= 35pp at 1.0", range.front() >= 85 && range.back() <= 35);
  }
  return t;
}

ReportTable table8(Workspace& ws) {
  auto t = make_table(ws, "table8", "Handler firing rate and MLP output norm by consensus count",
                      {"c", "count", "percent", "handler_rate_pct", "mean_norm"}, "Table 8");
  const int layer = profile_layer(ws);
  const auto& p = ws.profile();
  const auto src = ws.source(layer);
  const auto prof = routing::make_profile(src, p.handler, p.consensus, ws.threshold());
  const auto norms = src.output_norms();
  const auto g = routing::consensus_gradient(prof, norms, ws.config().bootstrap, ws.config().seed);
  std::vector<double> rate, norm;
  std::size_t total = 0;
  for (const auto& r : g.rows) {
    t.add_row({static_cast<std::int64_t>(r.c), integer(r.count), r.percent, r.handler_rate * 100, r.mean_norm});
    total += r.count;
    rate.push_back(r.handler_rate);
    norm.push_back(r.mean_norm);
  }
  t.summary["range_pp"] = g.summary.range_pp;
  t.summary["norm_ratio"] = g.summary.norm_ratio;
  t.summary["exclusivity_pct"] = g.summary.exclusivity * 100;
  if (g.bootstrap) {
    const auto& b = *g.bootstrap;
    t.summary["bootstrap_resamples"] = b.resamples;
    t.summary["range_pp_ci"] = {b.range_pp.lo, b.range_pp.hi};
    t.summary["norm_ratio_ci"] = {b.norm_ratio.lo, b.norm_ratio.hi};
    t.summary["exclusivity_ci"] = {b.exclusivity.lo, b.exclusivity.hi};
    t.summary["monotone_fraction"] = b.monotone_fraction;
  }
  t.check("partition", "consensus rows partition the tokens", total == prof.n());
  if (t.checks_applicable) {
    const auto& r = g.rows;
    t.check("7", "handler-rate column strictly decreasing", g.summary.handler_monotone);
    t.check("7", "norm column strictly decreasing", g.summary.norm_monotone);
    t.check("7", "handler rate >= 90% at c=0 and <= 2% at c=7",
            r.front().handler_rate >= 0.90 && r.back().handler_rate <= 0.02);
    t.check("7", "norm ratio (c=0)/(c=7) = 2.8 +- 0.4", std::abs(g.summary.norm_ratio - 2.8) <= 0.4);
    t.check("7", "bootstrap (>= 1,000 resamples) monotone in >= 99% of resamples",
            g.bootstrap && g.bootstrap->resamples >= 1000 && g.bootstrap->monotone_fraction >= 0.99);
  }
  return t;
}

ReportTable listing1(Workspace& ws) {
  auto t = make_table(ws, "listing1", "Bit patterns of the pattern neurons enriched in barely nonlinear tokens",
                      {"rank", "pattern", "barely", "linear", "enrichment", "examples"}, "Listing 1");
  const int layer = profile_layer(ws);
  const auto src = ws.source(layer);
  const auto& ds = ws.delta(layer);
  const auto neurons = pattern_neurons(ws, src, ds);
  const auto bits = routing::binarize(src.activations(neurons), ws.threshold());
  const auto rep = routing::pattern_enrichment(bits, neurons, ds.regimes, ds.tokens, &ws.vocab());
  std::int64_t rank = 0;
  std::optional<double> alone;
  for (const auto& s : rep.top) {
    t.add_row({++rank, s.bits, integer(s.barely), integer(s.linear), s.enrichment, fmt::format("{}", fmt::join(s.examples, " | "))});
    if (s.bits == "00010000") alone = s.enrichment;
  }
  t.summary["neurons"] = join_ids(neurons);
  t.summary["n_barely"] = rep.n_barely;
  t.summary["n_linear"] = rep.n_linear;
  t.summary["gateway"] = rep.gateway ? nlohmann::ordered_json(*rep.gateway) : nlohmann::ordered_json(nullptr);
  t.summary["gateway_appearances"] = rep.gateway_appearances;
  t.summary["appearances"] = rep.appearances;
  t.summary["aggregate_enrichment"] = rep.aggregate;
  if (t.checks_applicable) {
    t.check("13", "pattern 00010000 enrichment >= 5x", alone && *alone >= 5.0);
    t.check("13", "gateway neuron in >= 15 of the top-20 patterns", rep.gateway_appearances >= 15);
  }
  return t;
}

ReportTable binvscont(Workspace& ws) {
  auto t = make_table(ws, "binvscont", "Binary versus continuous pattern-neuron features",
                      {"labels", "binary_accuracy", "continuous_accuracy", "base_rate", "binary_norm_r2",
                       "continuous_norm_r2", "n_train", "n_val"},
                      "Binary vs continuous");
  const int layer = profile_layer(ws);
  const auto src = ws.source(layer);
  const auto& ds = ws.delta(layer);
  const auto acts = src.activations(pattern_neurons(ws, src, ds));
  const auto norms = src.output_norms();
  routing::BinaryVsContinuous real;
  for (bool shuffled : {false, true}) {
    const auto r = routing::binary_vs_continuous(acts, ws.threshold(), ds.regimes, norms, ws.config().seed, shuffled);
    t.add_row({shuffled ? "shuffled" : "top25_delta", r.binary_accuracy, r.continuous_accuracy, r.base_rate,
               r.binary_r2, r.continuous_r2, integer(r.n_train), integer(r.n_val)});
    if (!shuffled) real = r;
  }
  if (t.checks_applicable) {
    t.check("14", "|binary accuracy - continuous accuracy| <= 4pp",
            std::abs(real.binary_accuracy - real.continuous_accuracy) <= 0.04);
    t.check("14", "continuous norm R2 exceeds binary by >= 0.08", real.continuous_r2 - real.binary_r2 >= 0.08);
  }
  return t;
}

ReportTable tree(Workspace& ws) {
  auto t = make_table(ws, "tree", "Decision trees on binarized pattern neurons",
                      {"task", "depth", "accuracy", "baseline", "n_train", "n_val"}, "Decision trees");
  const int layer = profile_layer(ws);
  const auto src = ws.source(layer);
  const auto& ds = ws.delta(layer);
  const auto bits = routing::binarize(src.activations(pattern_neurons(ws, src, ds)), ws.threshold());
  const auto r = routing::tree_validation(bits, ds.regimes, ws.config().seed);
  t.add_row({"binary_top25", static_cast<std::int64_t>(r.binary_depth), r.binary_accuracy, r.binary_baseline,
             integer(r.n_train), integer(r.n_val)});
  t.add_row({"quintile", static_cast<std::int64_t>(r.five_depth), r.five_accuracy, r.five_baseline, integer(r.n_train),
             integer(r.n_val)});
  if (t.checks_applicable) {
    t.check("15", "binary depth-3 beats majority baseline by >= 4pp", r.binary_accuracy - r.binary_baseline >= 0.04);
    t.check("15", "5-class depth-5 beats baseline by >= 6pp", r.five_accuracy - r.five_baseline >= 0.06);
  }
  return t;
}

ReportTable controls(Workspace& ws) {
  auto t = make_table(ws, "controls", "Random-neuron, random-weight and handler patch controls",
                      {"control", "level", "metric", "value"}, "Controls");
  const int layer = profile_layer(ws);
  const auto& p = ws.profile();
  const auto src = ws.source(layer);
  const auto& ds = ws.delta(layer);
  const auto norms = src.output_norms();
  const auto real = routing::summarize(routing::make_profile(src, p.handler, p.consensus, ws.threshold()), norms);
  const auto stats = routing::firing_stats(src, ds.regimes, ws.threshold());
  routing::ControlOptions co;
  co.trials = ws.config().control_trials;
  co.seed = ws.config().seed;
  co.consensus_size = static_cast<int>(p.consensus.size());
  const auto rn = routing::random_neuron_control(src, stats, norms, real, ws.threshold(), co);
  const double n = static_cast<double>(rn.trials.size());
  t.add_row({"random_neuron", "", "trials", integer(rn.trials.size())});
  t.add_row({"random_neuron", "", "eligible_high", integer(rn.eligible_high)});
  t.add_row({"random_neuron", "", "eligible_low", integer(rn.eligible_low)});
  t.add_row({"random_neuron", "", "real_range_pp", real.range_pp});
  t.add_row({"random_neuron", "", "real_norm_ratio", real.norm_ratio});
  t.add_row({"random_neuron", "", "beat_range", static_cast<std::int64_t>(rn.beat_range)});
  t.add_row({"random_neuron", "", "beat_norm_ratio", static_cast<std::int64_t>(rn.beat_norm_ratio)});
  t.add_row({"random_neuron", "", "beat_exclusivity", static_cast<std::int64_t>(rn.beat_exclusivity)});
  t.add_row({"random_neuron", "", "best_range_pp", rn.best_range_pp});

  const auto rw = routing::random_weight_control(ws.weights().config, ws.config().seed + 1, ws.windows(),
                                                 active_profile(ws), 0);
  t.add_row({"random_weight", "", "tokens", integer(rw.tokens)});
  t.add_row({"random_weight", "", "norm_ratio", rw.gradient.summary.norm_ratio});
  t.add_row({"random_weight", "", "range_pp", rw.gradient.summary.range_pp});
  t.add_row({"random_weight", "", "handler_monotone", rw.gradient.summary.handler_monotone});
  t.add_row({"random_weight", "", "norm_monotone", rw.gradient.summary.norm_monotone});

  const auto levels = ws.consensus_levels();
  const int n_levels = static_cast<int>(p.consensus.size()) + 1;
  bool small = true;
  for (auto mode : {causal::PatchMode::Zero, causal::PatchMode::ClampOn}) {
    const auto rows = causal::neuron_patch_test(ws.weights(), ws.windows(), levels, n_levels, layer, p.handler, mode,
                                                1.0f, ws.config().threads);
    for (const auto& r : rows) {
      t.add_row({fmt::format("patch_{}_{}", causal::patch_mode_name(mode), p.handler), r.level, "delta_pct", r.delta_pct});
      small = small && (r.count == 0 || std::abs(r.delta_pct) < 0.5);
    }
  }
  if (t.checks_applicable) {
    t.check("9", "0 of 1,000 random trials exceed the real gradient range", rn.beat_range == 0 && n >= 1000);
    t.check("9", "<= 3% of random trials exceed the real norm ratio", rn.beat_norm_ratio <= 0.03 * n);
    t.check("9", "random weights: norm ratio <= 1.2", rw.gradient.summary.norm_ratio <= 1.2);
    t.check("9", "random weights: no strictly monotone gradient",
            !rw.gradient.summary.handler_monotone && !rw.gradient.summary.norm_monotone);
    t.check("12", "handler zero and clamp-on patches: |delta %| < 0.5 at every level", small);
  }
  return t;
}

ReportTable alllayers(Workspace& ws) {
  auto t = make_table(ws, "alllayers", "Cross-layer scan",
                      {"layer", "mean_delta", "exception", "exception_rate_pct", "consensus_count", "consensus",
                       "exclusivity_pct", "gateway", "gateway_appearances", "monotone", "phase"},
                      "Three-phase arc");
  std::vector<int> layers;
  if (ws.config().layer) {
    layers = {*ws.config().layer};
  } else {
    layers.resize(static_cast<std::size_t>(ws.weights().config.n_layers));
    std::iota(layers.begin(), layers.end(), 0);
  }
  ws.prepare(layers);
  std::map<int, routing::LayerScan> rows;
  for (int layer : layers) {
    const auto r = routing::scan_layer(ws.source(layer), ws.delta(layer), ws.threshold());
    rows[layer] = r;
    t.add_row({static_cast<std::int64_t>(layer), r.mean_delta, opt_neuron(r.exception), r.exception_rate * 100,
               integer(r.consensus.size()), join_ids(r.consensus), r.exclusivity * 100, opt_neuron(r.gateway),
               static_cast<std::int64_t>(r.gateway_appearances), r.monotone, r.phase});
  }
  if (t.checks_applicable) {
    std::vector<double> late;
    for (int l = 7; l <= 11; ++l) late.push_back(rows[l].mean_delta);
    t.check("16", "mean delta strictly increasing L7 to L11", strictly_increasing(late));
    bool diffuse = true, flat = true;
    for (int l = 4; l <= 6; ++l) {
      diffuse = diffuse && !rows[l].exception && !rows[l].gateway;
      flat = flat && !rows[l].monotone;
    }
    t.check("16", "L4-L6 have neither exception nor gateway", diffuse);
    t.check("16", "L11 has >= 5 consensus neurons", rows[11].consensus.size() >= 5);
    t.check("16", "monotone at L7, L8, L10, L11 and not at L4-L6",
            flat && rows[7].monotone && rows[8].monotone && rows[10].monotone && rows[11].monotone);
  }
  return t;
}

// ---------------------------------------------------------------- causal

void check_counts(ReportTable& t, Workspace& ws, const std::vector<std::size_t>& counts) {
  const auto levels = ws.consensus_levels();
  std::vector<std::size_t> expected(counts.size(), 0);
  std::size_t pos = 0;
  for (const auto& w : ws.windows()) {
    for (std::size_t i = 0; i + 1 < w.size(); ++i) ++expected[levels[pos + i]];
    pos += w.size();
  }
  t.check("counts", "per-level counts equal the gradient counts minus each window's final position",
          expected == counts);
}

ReportTable table6(Workspace& ws) {
  auto t = make_table(ws, "table6", "Perplexity impact of removing the MLP, by consensus level",
                      {"c", "count", "base_ppl", "ablated_ppl", "delta_pct"}, "Table 6");
  const int n_levels = static_cast<int>(ws.profile().consensus.size()) + 1;
  const auto& recs = ws.ablation(ws.config().ablation);
  const auto rows = causal::ablation_report(recs, n_levels);
  std::vector<double> delta;
  std::vector<std::size_t> counts;
  for (const auto& r : rows) {
    t.add_row({r.level, integer(r.count), r.base_ppl, r.ablated_ppl, r.delta_pct});
    if (r.level != "All") {
      delta.push_back(r.delta_pct);
      counts.push_back(r.count);
    }
  }
  t.summary["mode"] = causal::ablation_mode_name(ws.config().ablation);
  check_counts(t, ws, counts);
  if (t.checks_applicable) {
    const auto& all = rows.back();
    t.check("2", "clean perplexity in [20, 45]", all.base_ppl >= 20 && all.base_ppl <= 45);
    t.check("10", "delta % decreasing in c, at most one adjacent inversion <= 2pp", decreasing_with_slack(delta, 2.0));
    t.check("10", "delta %(c=0) / delta %(c=7) >= 3.0", delta.front() / delta.back() >= 3.0);
    t.check("10", "delta %(c=0) in [30, 60]", delta.front() >= 30 && delta.front() <= 60);
    t.check("10", "All-row delta % in [12, 22]", all.delta_pct >= 12 && all.delta_pct <= 22);
  }
  return t;
}

ReportTable table7(Workspace& ws) {
  auto t = make_table(ws, "table7", "KL divergence, correct-token boost and rank change without the MLP",
                      {"c", "count", "kl", "boost", "boost_arithmetic", "delta_rank"}, "Table 7");
  const int n_levels = static_cast<int>(ws.profile().consensus.size()) + 1;
  const auto rows = causal::mechanism_report(ws.ablation(ws.config().ablation), n_levels);
  std::vector<double> kl, boost;
  for (const auto& r : rows) {
    t.add_row({r.level, integer(r.count), r.kl, r.boost_geometric, r.boost_arithmetic, r.delta_rank});
    if (r.level != "All") {
      kl.push_back(r.kl);
      boost.push_back(r.boost_geometric);
    }
  }
  t.summary["mode"] = causal::ablation_mode_name(ws.config().ablation);
  if (t.checks_applicable) {
    t.check("11", "KL decreasing c=0..6, at most one inversion <= 0.02",
            decreasing_with_slack(std::vector<double>(kl.begin(), kl.begin() + 7), 0.02));
    t.check("11", "KL(0) >= 1.7 KL(7)", kl.front() >= 1.7 * kl.back());
    int cross = -1;
    for (std::size_t c = 0; c < boost.size(); ++c) {
      if (boost[c] < 1.0) {
        cross = static_cast<int>(c);
        break;
      }
    }
    t.check("11", "boost first drops below 1.0 at some c >= 4", cross >= 4);
    t.check("11", "delta rank positive at c=7", rows[7].delta_rank > 0);
  }
  return t;
}

using TableFn = std::function<ReportTable(Workspace&)>;

const std::vector<std::pair<std::string, TableFn>>& registry() {
  static const std::vector<std::pair<std::string, TableFn>> r{
      {"table1", table1},   {"table2", table2},     {"table3", table3},   {"table4", table4},
      {"table5", table5},   {"table6", table6},     {"table7", table7},   {"table8", table8},
      {"table10", table10}, {"alllayers", alllayers}, {"listing1", listing1}, {"tree", tree},
      {"binvscont", binvscont}, {"controls", controls},
  };
  return r;
}

#ifndef SWITCHBOARD_ASSET_DIR
#define SWITCHBOARD_ASSET_DIR "assets"
#endif
#ifndef SWITCHBOARD_VERSION
#define SWITCHBOARD_VERSION "0.0.0"
#endif

}  // namespace

// ---------------------------------------------------------------- config

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["model"] = model.string();
  j["corpus"] = corpus.string();
  j["vocab_dir"] = vocab_dir.string();
  j["profile"] = profile.string();
  j["tokens"] = tokens;
  j["layer"] = layer ? nlohmann::ordered_json(*layer) : nlohmann::ordered_json(nullptr);
  j["threshold"] = threshold ? nlohmann::ordered_json(*threshold) : nlohmann::ordered_json(nullptr);
  j["seed"] = seed;
  j["bootstrap"] = bootstrap;
  j["control_trials"] = control_trials;
  j["branch_clusters"] = branch_clusters;
  j["ablation"] = causal::ablation_mode_name(ablation);
  j["capture_neurons"] = capture_neurons;
  return j;
}

std::string RunConfig::hash() const { return sha256_text(to_json().dump()); }

// ---------------------------------------------------------------- workspace

Workspace::Workspace(RunConfig config) : config_(std::move(config)) {}
Workspace::~Workspace() = default;

namespace {

fs::path resolve_asset(const RunConfig& c, const std::string& name) {
  const fs::path manifest = c.manifest.empty() ? fs::path(SWITCHBOARD_ASSET_DIR) / "manifest.json" : c.manifest;
  const auto m = assets::Manifest::load(manifest);
  assets::FetchOptions o;
  o.offline = c.offline;
  return assets::ensure(m, m.find(name), c.cache.empty() ? assets::cache_dir() : c.cache, o).path;
}

}  // namespace

const model::ModelWeights& Workspace::weights() {
  if (!weights_) {
    const fs::path p = config_.model.empty() ? resolve_asset(config_, "model.safetensors") : config_.model;
    weights_ = model::load_weights(p);
  }
  return *weights_;
}

const tok::BpeVocab& Workspace::vocab() {
  if (!vocab_) {
    if (!config_.vocab_dir.empty()) {
      vocab_ = tok::BpeVocab::load(config_.vocab_dir / "vocab.json", config_.vocab_dir / "merges.txt");
    } else {
      vocab_ = tok::BpeVocab::load(resolve_asset(config_, "vocab.json"), resolve_asset(config_, "merges.txt"));
    }
  }
  return *vocab_;
}

const routing::Profile& Workspace::profile() {
  if (!profile_) {
    profile_ = config_.profile.empty() ? routing::Profile::load(fs::path(SWITCHBOARD_ASSET_DIR) / "profiles/layer11.json")
                                       : routing::Profile::load(config_.profile);
  }
  return *profile_;
}

double Workspace::threshold() { return config_.threshold.value_or(profile().threshold); }

int Workspace::window_length() { return std::min(1024, weights().config.n_ctx); }

const std::vector<TokenId>& Workspace::stream() {
  if (stream_) return *stream_;
  const fs::path corpus = config_.corpus.empty() ? resolve_asset(config_, "wikitext-103-raw-v1.zip") : config_.corpus;
  const std::string sha = assets::sha256_file(corpus);
  corpus_id_ = fmt::format("{} sha256:{}", corpus.filename().string(), sha);
  const std::size_t want = config_.tokens;
  const fs::path cache = config_.out / "cache" / fmt::format("tokens-{}-{}.i32", sha.substr(0, 16), want);
  std::vector<TokenId> ids;
  if (fs::exists(cache) && fs::file_size(cache) % sizeof(TokenId) == 0) {
    ids.resize(fs::file_size(cache) / sizeof(TokenId));
    std::ifstream in(cache, std::ios::binary);
    in.read(reinterpret_cast<char*>(ids.data()), static_cast<std::streamsize>(ids.size() * sizeof(TokenId)));
  } else {
    // Encode a growing prefix; tokens well before the cut are unaffected by it.
    const auto size = fs::file_size(corpus);
    std::size_t bytes = std::min<std::uint64_t>(size, want * 6 + 4096);
    std::ifstream in(corpus, std::ios::binary);
    for (;;) {
      std::string text(bytes, '\0');
      in.clear();
      in.seekg(0);
      in.read(text.data(), static_cast<std::streamsize>(bytes));
      ids = tok::bpe_encode(text, vocab());
      if (bytes == size) break;
      if (ids.size() >= want + 512) break;
      bytes = std::min<std::uint64_t>(size, bytes * 2);
    }
    if (ids.size() > want) ids.resize(want);
    std::string raw(reinterpret_cast<const char*>(ids.data()), ids.size() * sizeof(TokenId));
    report::write_text_atomic(cache, raw);
  }
  for (TokenId id : ids) {
    if (id < 0 || id >= weights().config.vocab) {
      throw InvalidArgument(fmt::format("token id {} outside the model vocabulary of {}", id, weights().config.vocab));
    }
  }
  stream_ = std::move(ids);
  return *stream_;
}

std::vector<std::span<const TokenId>> Workspace::windows() {
  return capture::make_windows(stream(), window_length(), config_.tokens);
}

void Workspace::require_tokens() {
  std::size_t n = 0;
  for (const auto& w : windows()) n += w.size();
  if (n < kMinStatisticsTokens) {
    throw InvalidArgument(fmt::format("{} tokens in whole windows; statistics need at least {}", n, kMinStatisticsTokens));
  }
}

fs::path Workspace::store_dir() {
  stream();
  const std::string key = sha256_text(fmt::format("{}|{}|{}|{}|{}|{}", weights().source, weights().sha256, corpus_id_,
                                                  config_.tokens, window_length(), join_ids(config_.capture_neurons)));
  return config_.out / "stores" / key.substr(0, 16);
}

void Workspace::prepare(const std::vector<int>& layers) {
  require_tokens();
  const fs::path dir = store_dir();
  std::vector<int> missing;
  for (int l : layers) {
    if (l < 0 || l >= weights().config.n_layers) {
      throw InvalidArgument(fmt::format("layer {} outside 0..{}", l, weights().config.n_layers - 1));
    }
    if (!fs::exists(store::sidecar_path(dir, l)) && std::find(missing.begin(), missing.end(), l) == missing.end()) {
      missing.push_back(l);
    }
  }
  if (missing.empty()) return;
  capture::Options o;
  o.layers = missing;
  o.window = window_length();
  o.token_budget = config_.tokens;
  o.neurons = config_.capture_neurons;
  o.threads = config_.threads;
  o.provenance = {{"model", weights().source}, {"model_sha256", weights().sha256}, {"corpus", corpus_id_}};
  spdlog::info("capturing layers {} over {} tokens into {}", join_ids(missing), config_.tokens, dir.string());
  capture::capture_layers(weights(), stream(), o, dir);
}

const store::CaptureReader& Workspace::store(int layer) {
  auto it = stores_.find(layer);
  if (it != stores_.end()) return *it->second;
  prepare({layer});
  auto reader = std::make_unique<store::CaptureReader>(store_dir(), layer);
  return *stores_.emplace(layer, std::move(reader)).first->second;
}

const probe::DeltaSet& Workspace::delta(int layer) {
  auto it = deltas_.find(layer);
  if (it != deltas_.end()) return it->second;
  const auto& reader = store(layer);
  const fs::path dir = store_dir();
  probe::DeltaSet ds;
  if (fs::exists(dir / fmt::format("layer{:02d}.delta.json", layer))) {
    ds = probe::load_delta_set(dir, layer);
  } else {
    ds = probe::compute_delta(reader);
    probe::save_delta_set(ds, dir);
  }
  return deltas_.emplace(layer, std::move(ds)).first->second;
}

routing::ActivationSource Workspace::source(int layer) {
  return routing::ActivationSource(store(layer), routing::MlpInWeights::from_model(weights(), layer));
}

std::vector<std::uint8_t> Workspace::consensus_levels() {
  const auto& p = profile();
  const auto prof = routing::make_profile(source(profile_layer(*this)), p.handler, p.consensus, threshold());
  return prof.count;
}

const std::vector<causal::PositionRecord>& Workspace::ablation(causal::AblationMode mode) {
  const int key = static_cast<int>(mode);
  auto it = ablations_.find(key);
  if (it != ablations_.end()) return it->second;
  require_tokens();
  const auto p = active_profile(*this);
  const fs::path file = store_dir() / fmt::format("ablation-{}-{}.bin", causal::ablation_mode_name(mode),
                                                  sha256_text(p.to_json().dump()).substr(0, 12));
  std::vector<causal::PositionRecord> recs;
  constexpr std::size_t kRecordBytes = 1 + 5 * sizeof(double);
  if (fs::exists(file) && fs::file_size(file) % kRecordBytes == 0) {
    std::ifstream in(file, std::ios::binary);
    recs.resize(fs::file_size(file) / kRecordBytes);
    for (auto& r : recs) {
      in.read(reinterpret_cast<char*>(&r.level), 1);
      for (double* v : {&r.loss_clean, &r.loss_ablated, &r.kl, &r.log_boost, &r.delta_rank}) {
        in.read(reinterpret_cast<char*>(v), sizeof(double));
      }
    }
  } else {
    causal::CausalOptions o;
    o.layer = p.layer;
    o.mode = mode;
    o.threads = config_.threads;
    const auto levels = consensus_levels();
    recs = causal::ablation_records(weights(), windows(), levels, static_cast<int>(p.consensus.size()) + 1, o);
    std::string raw;
    raw.reserve(recs.size() * kRecordBytes);
    for (const auto& r : recs) {
      raw.push_back(static_cast<char>(r.level));
      for (double v : {r.loss_clean, r.loss_ablated, r.kl, r.log_boost, r.delta_rank}) {
        raw.append(reinterpret_cast<const char*>(&v), sizeof(double));
      }
    }
    report::write_text_atomic(file, raw);
  }
  return ablations_.emplace(key, std::move(recs)).first->second;
}

bool Workspace::reference_run() {
  const routing::Profile shipped;
  const auto& p = profile();
  return weights().config == model::ModelConfig{} && p.handler == shipped.handler && p.consensus == shipped.consensus &&
         p.pattern_neurons == shipped.pattern_neurons && p.layer == shipped.layer && !config_.layer &&
         threshold() == shipped.threshold && config_.tokens >= 50000;
}

nlohmann::ordered_json Workspace::provenance(const std::string& mirrors) {
  std::size_t n = 0;
  const auto wins = windows();
  for (const auto& w : wins) n += w.size();
  nlohmann::ordered_json j;
  j["mirrors"] = mirrors;
  j["version"] = SWITCHBOARD_VERSION;
  j["config_hash"] = config_.hash();
  j["seed"] = config_.seed;
  j["tokens"] = n;
  j["windows"] = wins.size();
  j["window_length"] = window_length();
  j["model"] = weights().source;
  j["model_sha256"] = weights().sha256;
  j["corpus"] = corpus_id_;
  j["corpus_normalization"] = "raw text, no markup stripping";
  j["threshold"] = threshold();
  j["profile"] = active_profile(*this).to_json();
  return j;
}

// ---------------------------------------------------------------- tables

std::vector<std::string> table_names() {
  std::vector<std::string> names;
  for (const auto& [n, fn] : registry()) names.push_back(n);
  return names;
}

ReportTable run_table(const std::string& name, Workspace& ws) {
  for (const auto& [n, fn] : registry()) {
    if (n == name) {
      spdlog::info("running {}", name);
      return fn(ws);
    }
  }
  throw InvalidArgument(fmt::format("unknown table '{}'; valid names: {}", name, fmt::join(table_names(), ", ")));
}

int exit_code(const std::vector<ReportTable>& tables) {
  for (const auto& t : tables) {
    if (!t.passed()) return 2;
  }
  return 0;
}

}  // namespace switchboard::pipeline
