#include "switchboard/routing.hpp"

#include "switchboard/error.hpp"
#include "switchboard/numerics/linear.hpp"
#include "switchboard/numerics/ridge.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <unordered_map>

namespace switchboard::routing {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void gelu_block(Eigen::MatrixXf& m) { model::gelu_inplace(m); }

std::vector<std::uint8_t> top_quarter_labels(const probe::RegimeAssignment& regimes) {
  const std::size_t n = regimes.n();
  const std::size_t cut = n - n / 4;
  std::vector<std::uint8_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = regimes.rank[i] >= cut;
  return out;
}

// Level counts and pair tallies over a (possibly repeated) token index list.
struct Tallies {
  std::vector<std::int64_t> count, handler;
  std::vector<double> norm_sum;
  std::int64_t handler_total = 0;
  std::vector<std::int64_t> both, consensus_total;
};

template <typename Visit>
Tallies tally(const ConsensusProfile& p, std::span<const float> norms, Visit&& for_each_token) {
  const int levels = p.levels();
  const auto m = static_cast<Eigen::Index>(p.consensus.size());
  Tallies t;
  t.count.assign(static_cast<std::size_t>(levels), 0);
  t.handler.assign(static_cast<std::size_t>(levels), 0);
  t.norm_sum.assign(static_cast<std::size_t>(levels), 0.0);
  t.both.assign(static_cast<std::size_t>(m), 0);
  t.consensus_total.assign(static_cast<std::size_t>(m), 0);
  for_each_token([&](std::size_t i) {
    const auto c = p.count[i];
    const bool h = p.handler_bit[i] != 0;
    ++t.count[c];
    t.handler[c] += h;
    t.norm_sum[c] += norms[i];
    t.handler_total += h;
    for (Eigen::Index j = 0; j < m; ++j) {
      const bool b = p.consensus_bits(static_cast<Eigen::Index>(i), j) != 0;
      t.consensus_total[static_cast<std::size_t>(j)] += b;
      t.both[static_cast<std::size_t>(j)] += b && h;
    }
  });
  return t;
}

std::vector<GradientRow> rows_of(const Tallies& t) {
  const std::int64_t total = std::accumulate(t.count.begin(), t.count.end(), std::int64_t{0});
  std::vector<GradientRow> rows;
  for (std::size_t c = 0; c < t.count.size(); ++c) {
    GradientRow r;
    r.c = static_cast<int>(c);
    r.count = static_cast<std::size_t>(t.count[c]);
    r.empty = t.count[c] == 0;
    r.percent = total > 0 ? 100.0 * static_cast<double>(t.count[c]) / static_cast<double>(total) : 0.0;
    r.handler_rate = r.empty ? kNaN : static_cast<double>(t.handler[c]) / static_cast<double>(t.count[c]);
    r.mean_norm = r.empty ? kNaN : t.norm_sum[c] / static_cast<double>(t.count[c]);
    rows.push_back(r);
  }
  return rows;
}

bool strictly_decreasing(const std::vector<GradientRow>& rows, double GradientRow::*column) {
  int seen = 0;
  double prev = 0;
  for (const auto& r : rows) {
    if (r.empty) continue;
    if (seen > 0 && !(r.*column < prev)) return false;
    prev = r.*column;
    ++seen;
  }
  return seen >= 2;
}

GradientSummary summary_of(const Tallies& t) {
  const auto rows = rows_of(t);
  GradientSummary s;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : rows) {
    if (r.empty) continue;
    lo = std::min(lo, r.handler_rate);
    hi = std::max(hi, r.handler_rate);
  }
  s.range_pp = hi >= lo ? 100.0 * (hi - lo) : 0.0;
  s.norm_ratio = rows.front().empty || rows.back().empty ? kNaN : rows.front().mean_norm / rows.back().mean_norm;
  double ex = 0;
  for (std::size_t j = 0; j < t.both.size(); ++j) {
    const num::Crosstab2x2 ct{t.both[j], t.handler_total - t.both[j], t.consensus_total[j] - t.both[j], 0};
    ex += num::exclusivity(ct);
  }
  s.exclusivity = t.both.empty() ? kNaN : ex / static_cast<double>(t.both.size());
  s.handler_monotone = strictly_decreasing(rows, &GradientRow::handler_rate);
  s.norm_monotone = strictly_decreasing(rows, &GradientRow::mean_norm);
  return s;
}

Tallies tally_subset(const ConsensusProfile& p, std::span<const float> norms, std::span<const std::size_t> tokens) {
  if (norms.size() != p.n()) {
    throw InvalidArgument(fmt::format("consensus: {} norms for {} tokens", norms.size(), p.n()));
  }
  if (tokens.empty()) {
    return tally(p, norms, [&](auto&& f) {
      for (std::size_t i = 0; i < p.n(); ++i) f(i);
    });
  }
  return tally(p, norms, [&](auto&& f) {
    for (auto i : tokens) f(i);
  });
}

num::BootstrapCi ci_from(double point, std::vector<double> samples) {
  num::BootstrapCi ci;
  ci.point = point;
  ci.samples = samples;
  samples.erase(std::remove_if(samples.begin(), samples.end(), [](double v) { return !std::isfinite(v); }),
                samples.end());
  if (samples.empty()) {
    ci.lo = ci.hi = kNaN;
    return ci;
  }
  std::sort(samples.begin(), samples.end());
  ci.lo = num::nearest_rank(samples, 2.5);
  ci.hi = num::nearest_rank(samples, 97.5);
  return ci;
}

}  // namespace

nlohmann::json Profile::to_json() const {
  return {{"layer", layer},
          {"handler", handler},
          {"consensus", consensus},
          {"pattern_neurons", pattern_neurons},
          {"pattern_ranking", pattern_ranking},
          {"threshold", threshold},
          {"seed", seed}};
}

Profile Profile::from_json(const nlohmann::json& j) {
  Profile p;
  try {
    p.layer = j.value("layer", p.layer);
    p.handler = j.value("handler", p.handler);
    p.consensus = j.value("consensus", p.consensus);
    p.pattern_neurons = j.value("pattern_neurons", p.pattern_neurons);
    p.pattern_ranking = j.value("pattern_ranking", p.pattern_ranking);
    p.threshold = j.value("threshold", p.threshold);
    p.seed = j.value("seed", p.seed);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("profile: {}", e.what()));
  }
  if (p.pattern_ranking != "barely_vs_linear" && p.pattern_ranking != "high_vs_linear") {
    throw FormatError(fmt::format("profile: unknown pattern_ranking '{}'", p.pattern_ranking));
  }
  if (p.pattern_neurons.size() > 32) throw FormatError("profile: at most 32 pattern neurons");
  return p;
}

Profile Profile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("{}: cannot open profile", path.string()));
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

MlpInWeights MlpInWeights::from_model(const model::ModelWeights& w, int layer) {
  if (layer < 0 || layer >= w.config.n_layers) throw InvalidArgument(fmt::format("layer {} out of range", layer));
  const auto& lw = w.layers[static_cast<std::size_t>(layer)];
  return {lw.w_in, lw.b_in};
}

ActivationSource::ActivationSource(const store::CaptureReader& reader, std::optional<MlpInWeights> weights)
    : reader_(&reader), weights_(std::move(weights)) {
  if (weights_) {
    if (weights_->w_in.cols() != reader.info().d_model || weights_->b_in.size() != weights_->w_in.rows()) {
      throw InvalidArgument(fmt::format("activation source: input weights {}x{} do not fit d_model {}",
                                        weights_->w_in.rows(), weights_->w_in.cols(), reader.info().d_model));
    }
    ids_.resize(static_cast<std::size_t>(weights_->w_in.rows()));
    std::iota(ids_.begin(), ids_.end(), 0);
  } else {
    ids_ = reader.info().neurons;
    std::sort(ids_.begin(), ids_.end());
  }
}

std::optional<float> ActivationSource::bias(int neuron) const {
  if (!weights_ || neuron < 0 || neuron >= weights_->b_in.size()) return std::nullopt;
  return weights_->b_in[neuron];
}

Eigen::MatrixXf ActivationSource::activations(const std::vector<int>& neurons) const {
  const auto n = static_cast<Eigen::Index>(n_tokens());
  const auto k = static_cast<Eigen::Index>(neurons.size());
  Eigen::MatrixXf out(k, n);
  if (weights_) {
    Eigen::MatrixXf w(k, weights_->w_in.cols());
    Eigen::VectorXf b(k);
    for (Eigen::Index r = 0; r < k; ++r) {
      const int id = neurons[static_cast<std::size_t>(r)];
      if (id < 0 || id >= weights_->w_in.rows()) {
        throw InvalidArgument(fmt::format("neuron {} out of range [0, {})", id, weights_->w_in.rows()));
      }
      w.row(r) = weights_->w_in.row(id);
      b[r] = weights_->b_in[id];
    }
    reader_->scan([&](const store::RecordBlock& blk) {
      Eigen::MatrixXf h = w * blk.x;
      h.colwise() += b;
      gelu_block(h);
      out.middleCols(static_cast<Eigen::Index>(blk.first), h.cols()) = h;
    });
    return out;
  }
  const auto& stored = reader_->info().neurons;
  std::vector<Eigen::Index> rows;
  for (int id : neurons) {
    const auto it = std::find(stored.begin(), stored.end(), id);
    if (it == stored.end()) {
      throw InvalidArgument(fmt::format(
          "missing hidden captures for neuron {} at layer {}; the store holds {} neurons and no layer weights "
          "were given to recompute them",
          id, reader_->info().layer, stored.size()));
    }
    rows.push_back(it - stored.begin());
  }
  reader_->scan([&](const store::RecordBlock& blk) {
    for (Eigen::Index r = 0; r < k; ++r) {
      out.row(r).segment(static_cast<Eigen::Index>(blk.first), blk.hidden.cols()) =
          blk.hidden.row(rows[static_cast<std::size_t>(r)]);
    }
  });
  return out;
}

void ActivationSource::scan(const std::function<void(std::size_t, const Eigen::MatrixXf&)>& fn) const {
  if (weights_) {
    reader_->scan([&](const store::RecordBlock& blk) {
      Eigen::MatrixXf h = weights_->w_in * blk.x;
      h.colwise() += weights_->b_in;
      gelu_block(h);
      fn(blk.first, h);
    });
    return;
  }
  if (ids_.empty()) {
    throw InvalidArgument(fmt::format(
        "missing hidden captures: layer {} store holds no neurons and no layer weights were given",
        reader_->info().layer));
  }
  const auto& stored = reader_->info().neurons;
  std::vector<Eigen::Index> rows;
  for (int id : ids_) rows.push_back(std::find(stored.begin(), stored.end(), id) - stored.begin());
  reader_->scan([&](const store::RecordBlock& blk) {
    Eigen::MatrixXf h(static_cast<Eigen::Index>(rows.size()), blk.hidden.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) h.row(static_cast<Eigen::Index>(r)) = blk.hidden.row(rows[r]);
    fn(blk.first, h);
  });
}

std::vector<float> ActivationSource::output_norms() const {
  std::vector<float> out;
  out.reserve(n_tokens());
  reader_->scan([&](const store::RecordBlock& blk) {
    for (Eigen::Index t = 0; t < blk.y.cols(); ++t) out.push_back(blk.y.col(t).cast<double>().norm());
  });
  return out;
}

std::vector<NeuronStat> firing_stats(const ActivationSource& source, const probe::RegimeAssignment& regimes,
                                     double threshold) {
  if (regimes.n() != source.n_tokens()) {
    throw InvalidArgument(fmt::format("firing_stats: {} regime labels for {} tokens", regimes.n(), source.n_tokens()));
  }
  const auto k = static_cast<Eigen::Index>(source.neuron_ids().size());
  // Columns: linear, barely, high, all.
  Eigen::MatrixXd fires = Eigen::MatrixXd::Zero(k, 4);
  source.scan([&](std::size_t first, const Eigen::MatrixXf& h) {
    Eigen::MatrixXf ind = Eigen::MatrixXf::Zero(h.cols(), 4);
    for (Eigen::Index t = 0; t < h.cols(); ++t) {
      const auto r = regimes.labels[first + static_cast<std::size_t>(t)];
      if (r == Regime::Linear) ind(t, 0) = 1;
      if (r == Regime::Barely) ind(t, 1) = 1;
      if (r == Regime::High) ind(t, 2) = 1;
      ind(t, 3) = 1;
    }
    const Eigen::MatrixXf on = (h.array() > static_cast<float>(threshold)).cast<float>();
    fires += (on * ind).cast<double>();
  });
  const double n_lin = static_cast<double>(regimes.count(Regime::Linear));
  const double n_bar = static_cast<double>(regimes.count(Regime::Barely));
  const double n_high = static_cast<double>(regimes.count(Regime::High));
  const double n_all = static_cast<double>(regimes.n());
  std::vector<NeuronStat> out;
  for (Eigen::Index r = 0; r < k; ++r) {
    NeuronStat s;
    s.neuron = source.neuron_ids()[static_cast<std::size_t>(r)];
    s.rate_linear = fires(r, 0) / n_lin;
    s.rate_barely = fires(r, 1) / n_bar;
    s.rate_high = fires(r, 2) / n_high;
    s.rate_overall = fires(r, 3) / n_all;
    s.delta_pp = 100.0 * (s.rate_high - s.rate_linear);
    s.bias = source.bias(s.neuron);
    out.push_back(s);
  }
  return out;
}

std::vector<NeuronStat> rank_by_shift(std::vector<NeuronStat> stats, Regime from, Regime to) {
  auto rate = [](const NeuronStat& s, Regime r) {
    switch (r) {
      case Regime::Linear: return s.rate_linear;
      case Regime::Barely: return s.rate_barely;
      case Regime::High: return s.rate_high;
      case Regime::Other: break;
    }
    return s.rate_overall;
  };
  std::stable_sort(stats.begin(), stats.end(), [&](const NeuronStat& a, const NeuronStat& b) {
    const double da = std::abs(rate(a, to) - rate(a, from)), db = std::abs(rate(b, to) - rate(b, from));
    if (da != db) return da > db;
    return a.neuron < b.neuron;
  });
  return stats;
}

num::BinaryMatrix binarize(const Eigen::MatrixXf& activations, double threshold) {
  return (activations.transpose().array() > static_cast<float>(threshold)).cast<std::uint8_t>();
}

ConsensusProfile make_profile(const Eigen::MatrixXf& activations, int handler, const std::vector<int>& consensus,
                              double threshold) {
  if (activations.rows() != static_cast<Eigen::Index>(consensus.size()) + 1) {
    throw InvalidArgument(fmt::format("consensus profile: {} activation rows for 1 handler and {} consensus neurons",
                                      activations.rows(), consensus.size()));
  }
  if (consensus.size() > 255) throw InvalidArgument("consensus profile: too many consensus neurons");
  ConsensusProfile p;
  p.handler = handler;
  p.consensus = consensus;
  p.threshold = threshold;
  const num::BinaryMatrix bits = binarize(activations, threshold);
  p.handler_bit.assign(bits.col(0).data(), bits.col(0).data() + bits.rows());
  p.consensus_bits = bits.rightCols(bits.cols() - 1);
  p.count.resize(static_cast<std::size_t>(bits.rows()));
  for (Eigen::Index i = 0; i < bits.rows(); ++i) {
    p.count[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(p.consensus_bits.row(i).cast<int>().sum());
  }
  return p;
}

ConsensusProfile make_profile(const ActivationSource& source, int handler, const std::vector<int>& consensus,
                              double threshold) {
  std::vector<int> ids{handler};
  ids.insert(ids.end(), consensus.begin(), consensus.end());
  return make_profile(source.activations(ids), handler, consensus, threshold);
}

std::vector<ExclusivityRow> exclusivity_table(const ConsensusProfile& p) {
  std::vector<ExclusivityRow> rows;
  for (std::size_t j = 0; j < p.consensus.size(); ++j) {
    num::Crosstab2x2 ct;
    for (std::size_t i = 0; i < p.n(); ++i) {
      const bool a = p.handler_bit[i] != 0;
      const bool b = p.consensus_bits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) != 0;
      (a ? (b ? ct.n11 : ct.n10) : (b ? ct.n01 : ct.n00)) += 1;
    }
    ExclusivityRow r;
    r.a = p.handler;
    r.b = p.consensus[j];
    r.both = ct.n11;
    r.either = ct.n11 + ct.n10 + ct.n01;
    r.exclusivity = num::exclusivity(ct);
    try {
      r.chi2 = num::chi2_independence(ct);
    } catch (const InvalidArgument&) {
      r.chi2 = kNaN;
    }
    rows.push_back(r);
  }
  return rows;
}

std::vector<GradientRow> gradient_rows(const ConsensusProfile& profile, std::span<const float> norms,
                                       std::span<const std::size_t> tokens) {
  return rows_of(tally_subset(profile, norms, tokens));
}

GradientSummary summarize(const ConsensusProfile& profile, std::span<const float> norms,
                          std::span<const std::size_t> tokens) {
  return summary_of(tally_subset(profile, norms, tokens));
}

ConsensusGradient consensus_gradient(const ConsensusProfile& profile, std::span<const float> norms,
                                     int bootstrap_resamples, std::uint64_t seed) {
  ConsensusGradient g;
  const auto t = tally_subset(profile, norms, {});
  g.rows = rows_of(t);
  g.summary = summary_of(t);
  if (bootstrap_resamples > 0 && profile.n() >= 2) {
    std::vector<double> ratio, excl;
    int monotone = 0;
    bool first_call = true;
    const auto range = num::bootstrap_ci(
        profile.n(),
        [&](std::span<const std::size_t> idx) {
          const auto s = summarize(profile, norms, idx);
          if (first_call) {  // the point estimate on the unresampled data
            first_call = false;
          } else {
            ratio.push_back(s.norm_ratio);
            excl.push_back(s.exclusivity);
            monotone += s.handler_monotone && s.norm_monotone;
          }
          return s.range_pp;
        },
        bootstrap_resamples, seed);
    GradientBootstrap b;
    b.resamples = bootstrap_resamples;
    b.seed = seed;
    b.range_pp = range;
    b.norm_ratio = ci_from(g.summary.norm_ratio, std::move(ratio));
    b.exclusivity = ci_from(g.summary.exclusivity, std::move(excl));
    b.monotone_fraction = static_cast<double>(monotone) / bootstrap_resamples;
    g.bootstrap = std::move(b);
  }
  return g;
}

std::vector<ThresholdRow> threshold_sweep(const Eigen::MatrixXf& activations, int handler,
                                          const std::vector<int>& consensus, std::span<const float> norms,
                                          const std::vector<double>& thresholds) {
  std::vector<ThresholdRow> out;
  for (double thr : thresholds) {
    out.push_back({thr, summarize(make_profile(activations, handler, consensus, thr), norms)});
  }
  return out;
}

RandomNeuronControl random_neuron_control(const ActivationSource& source, const std::vector<NeuronStat>& stats,
                                          std::span<const float> norms, const GradientSummary& real,
                                          double threshold, const ControlOptions& o) {
  RandomNeuronControl res;
  res.real = real;
  std::vector<int> high, low;
  for (const auto& s : stats) {
    if (s.rate_overall > o.high_min_rate) high.push_back(s.neuron);
    if (s.rate_overall >= o.low_min_rate && s.rate_overall <= o.low_max_rate) low.push_back(s.neuron);
  }
  res.eligible_high = high.size();
  res.eligible_low = low.size();
  if (o.trials <= 0) return res;
  if (high.size() < static_cast<std::size_t>(o.consensus_size) || low.empty()) {
    throw InvalidArgument(fmt::format(
        "random neuron control: {} neurons above {:.0f}% and {} within {:.0f}-{:.0f}%; need {} and 1",
        high.size(), 100 * o.high_min_rate, low.size(), 100 * o.low_min_rate, 100 * o.low_max_rate,
        o.consensus_size));
  }
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<std::size_t> pick_low(0, low.size() - 1);
  for (int t = 0; t < o.trials; ++t) {
    if (t == 0 && o.inject) {
      res.trial_ids.push_back(*o.inject);
      continue;
    }
    std::vector<int> ids{low[pick_low(rng)]};
    std::vector<int> chosen;
    std::sample(high.begin(), high.end(), std::back_inserter(chosen), o.consensus_size, rng);
    ids.insert(ids.end(), chosen.begin(), chosen.end());
    res.trial_ids.push_back(std::move(ids));
  }

  // Bits of every neuron any trial uses, from one pass over the store.
  std::vector<int> used;
  for (const auto& ids : res.trial_ids) used.insert(used.end(), ids.begin(), ids.end());
  std::sort(used.begin(), used.end());
  used.erase(std::unique(used.begin(), used.end()), used.end());
  std::unordered_map<int, std::size_t> slot;
  for (std::size_t i = 0; i < used.size(); ++i) slot[used[i]] = i;
  const auto& ids_all = source.neuron_ids();
  std::vector<Eigen::Index> src_row(used.size(), -1);
  for (std::size_t i = 0; i < used.size(); ++i) {
    const auto it = std::lower_bound(ids_all.begin(), ids_all.end(), used[i]);
    if (it == ids_all.end() || *it != used[i]) {
      throw InvalidArgument(fmt::format("random neuron control: no activations for neuron {}", used[i]));
    }
    src_row[i] = it - ids_all.begin();
  }
  num::BinaryMatrix bits(static_cast<Eigen::Index>(source.n_tokens()), static_cast<Eigen::Index>(used.size()));
  source.scan([&](std::size_t first, const Eigen::MatrixXf& h) {
    for (std::size_t i = 0; i < used.size(); ++i) {
      bits.col(static_cast<Eigen::Index>(i)).segment(static_cast<Eigen::Index>(first), h.cols()) =
          (h.row(src_row[i]).array() > static_cast<float>(threshold)).cast<std::uint8_t>().transpose();
    }
  });

  for (const auto& ids : res.trial_ids) {
    ConsensusProfile p;
    p.handler = ids[0];
    p.consensus.assign(ids.begin() + 1, ids.end());
    p.threshold = threshold;
    const auto h = bits.col(static_cast<Eigen::Index>(slot[ids[0]]));
    p.handler_bit.assign(h.data(), h.data() + h.size());
    p.consensus_bits.resize(bits.rows(), static_cast<Eigen::Index>(p.consensus.size()));
    for (std::size_t j = 0; j < p.consensus.size(); ++j) {
      p.consensus_bits.col(static_cast<Eigen::Index>(j)) = bits.col(static_cast<Eigen::Index>(slot[p.consensus[j]]));
    }
    p.count.resize(static_cast<std::size_t>(bits.rows()));
    for (Eigen::Index i = 0; i < bits.rows(); ++i) {
      p.count[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(p.consensus_bits.row(i).cast<int>().sum());
    }
    const auto s = summarize(p, norms);
    res.trials.push_back(s);
    res.beat_range += s.range_pp > real.range_pp;
    res.beat_norm_ratio += s.norm_ratio > real.norm_ratio;
    res.beat_exclusivity += s.exclusivity > real.exclusivity;
    res.best_range_pp = std::max(res.best_range_pp, s.range_pp);
  }
  return res;
}

RandomWeightControl random_weight_control(const model::ModelConfig& config, std::uint64_t seed,
                                          const std::vector<std::span<const TokenId>>& windows,
                                          const Profile& profile, int bootstrap_resamples) {
  if (windows.empty()) throw InvalidArgument("random weight control: no windows");
  const auto weights = model::random_weights(config, seed);
  model::HookSpec hook;
  hook.layer = profile.layer;
  hook.mlp_output = true;
  hook.hidden = true;
  hook.neurons = {profile.handler};
  hook.neurons.insert(hook.neurons.end(), profile.consensus.begin(), profile.consensus.end());
  const std::array<model::HookSpec, 1> hooks{hook};

  std::size_t total = 0;
  for (const auto& w : windows) total += w.size();
  Eigen::MatrixXf acts(static_cast<Eigen::Index>(hook.neurons.size()), static_cast<Eigen::Index>(total));
  std::vector<float> norms;
  norms.reserve(total);
  Eigen::Index col = 0;
  for (const auto& w : windows) {
    auto prefix = model::run_prefix(w, weights, profile.layer);
    std::vector<model::Capture> caps;
    model::run_suffix(prefix, weights, hooks, model::Intervention::none(), &caps);
    const auto& cap = caps.at(0);
    acts.middleCols(col, cap.hidden.cols()) = cap.hidden;
    for (Eigen::Index t = 0; t < cap.mlp_output.cols(); ++t) {
      norms.push_back(static_cast<float>(cap.mlp_output.col(t).cast<double>().norm()));
    }
    col += cap.hidden.cols();
  }
  RandomWeightControl res;
  res.seed = seed;
  res.tokens = total;
  res.gradient = consensus_gradient(make_profile(acts, profile.handler, profile.consensus, profile.threshold), norms,
                                    bootstrap_resamples, profile.seed);
  return res;
}

EnrichmentReport pattern_enrichment(const num::BinaryMatrix& bits, const std::vector<int>& neurons,
                                    const probe::RegimeAssignment& regimes, std::span<const TokenId> tokens,
                                    const tok::BpeVocab* vocab, const EnrichmentOptions& o) {
  const auto k = static_cast<Eigen::Index>(neurons.size());
  if (bits.cols() != k || k > 32) throw InvalidArgument("pattern enrichment: need one bit column per neuron, at most 32");
  if (static_cast<std::size_t>(bits.rows()) != regimes.n() || tokens.size() != regimes.n()) {
    throw InvalidArgument("pattern enrichment: bits, regimes and tokens disagree in length");
  }
  struct Tally {
    std::size_t barely = 0, linear = 0;
    std::map<TokenId, std::size_t> barely_tokens;
  };
  std::map<std::uint32_t, Tally> by_pattern;
  EnrichmentReport rep;
  rep.neurons = neurons;
  for (Eigen::Index i = 0; i < bits.rows(); ++i) {
    const auto r = regimes.labels[static_cast<std::size_t>(i)];
    if (r != Regime::Barely && r != Regime::Linear) continue;
    std::uint32_t code = 0;
    for (Eigen::Index j = 0; j < k; ++j) code |= static_cast<std::uint32_t>(bits(i, j) != 0) << j;
    auto& t = by_pattern[code];
    if (r == Regime::Barely) {
      ++t.barely;
      ++rep.n_barely;
      ++t.barely_tokens[tokens[static_cast<std::size_t>(i)]];
    } else {
      ++t.linear;
      ++rep.n_linear;
    }
  }
  if (rep.n_barely == 0 || rep.n_linear == 0) {
    throw InvalidArgument("pattern enrichment: need tokens in both the barely and linear regimes");
  }
  const double nb = static_cast<double>(rep.n_barely), nl = static_cast<double>(rep.n_linear);
  std::vector<PatternStat> all;
  for (const auto& [code, t] : by_pattern) {
    PatternStat s;
    s.pattern = code;
    for (Eigen::Index j = 0; j < k; ++j) s.bits.push_back((code >> j) & 1u ? '1' : '0');
    s.barely = t.barely;
    s.linear = t.linear;
    s.enrichment = (static_cast<double>(t.barely) / nb) / ((static_cast<double>(t.linear) + 1.0) / nl);
    std::vector<std::pair<TokenId, std::size_t>> ex(t.barely_tokens.begin(), t.barely_tokens.end());
    std::stable_sort(ex.begin(), ex.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    for (std::size_t e = 0; e < ex.size() && e < static_cast<std::size_t>(o.examples); ++e) {
      s.examples.push_back(vocab ? vocab->bytes_of(ex[e].first) : fmt::format("#{}", ex[e].first));
    }
    all.push_back(std::move(s));
  }
  std::stable_sort(all.begin(), all.end(), [](const PatternStat& a, const PatternStat& b) {
    if (a.enrichment != b.enrichment) return a.enrichment > b.enrichment;
    if (a.barely != b.barely) return a.barely > b.barely;
    return a.pattern < b.pattern;
  });
  if (all.size() > static_cast<std::size_t>(o.top)) all.resize(static_cast<std::size_t>(o.top));
  rep.top = std::move(all);
  rep.appearances.assign(static_cast<std::size_t>(k), 0);
  for (const auto& s : rep.top) {
    for (Eigen::Index j = 0; j < k; ++j) rep.appearances[static_cast<std::size_t>(j)] += (s.pattern >> j) & 1u;
  }
  const auto best = std::max_element(rep.appearances.begin(), rep.appearances.end());
  if (best != rep.appearances.end() && *best >= o.gateway_min) {
    rep.gateway = neurons[static_cast<std::size_t>(best - rep.appearances.begin())];
    rep.gateway_appearances = *best;
  }
  std::size_t sum_b = 0, sum_l = 0;
  for (const auto& [code, t] : by_pattern) {
    sum_b += t.barely;
    sum_l += t.linear;
  }
  rep.aggregate = (static_cast<double>(sum_b) / nb) / (static_cast<double>(sum_l) / nl);
  return rep;
}

BinaryVsContinuous binary_vs_continuous(const Eigen::MatrixXf& activations, double threshold,
                                        const probe::RegimeAssignment& regimes, std::span<const float> norms,
                                        std::uint64_t seed, bool shuffle_labels) {
  const auto n = static_cast<std::size_t>(activations.cols());
  if (regimes.n() != n || norms.size() != n) {
    throw InvalidArgument("binary_vs_continuous: activations, regimes and norms disagree in length");
  }
  const auto top = top_quarter_labels(regimes);
  std::vector<int> labels(top.begin(), top.end());
  if (shuffle_labels) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::shuffle(labels.begin(), labels.end(), rng);
  }
  Eigen::MatrixXd cont = activations.transpose().cast<double>();
  const Eigen::RowVectorXd mean = cont.colwise().mean();
  cont.rowwise() -= mean;
  for (Eigen::Index j = 0; j < cont.cols(); ++j) {
    const double sd = std::sqrt(cont.col(j).squaredNorm() / static_cast<double>(cont.rows()));
    if (sd > 0) cont.col(j) /= sd;
  }
  const Eigen::MatrixXd bin = binarize(activations, threshold).cast<double>();

  BinaryVsContinuous res;
  const auto lb = num::logistic_holdout(bin, labels, seed);
  const auto lc = num::logistic_holdout(cont, labels, seed);
  res.binary_accuracy = lb.heldout_accuracy;
  res.continuous_accuracy = lc.heldout_accuracy;
  res.base_rate = lb.heldout_base_rate;

  const auto split = num::train_validation_split(n, 0.7, seed);
  res.n_train = split.train.size();
  res.n_val = split.validation.size();
  auto rows = [](const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
    return out;
  };
  Eigen::MatrixXd y(static_cast<Eigen::Index>(n), 1);
  for (std::size_t i = 0; i < n; ++i) y(static_cast<Eigen::Index>(i), 0) = norms[i];
  auto heldout_r2 = [&](const Eigen::MatrixXd& x) {
    const auto model = num::ridge_fit(rows(x, split.train), rows(y, split.train), 1.0);
    return num::r2_score(rows(y, split.validation), model.predict(rows(x, split.validation))).mean;
  };
  res.binary_r2 = heldout_r2(bin);
  res.continuous_r2 = heldout_r2(cont);
  return res;
}

TreeValidation tree_validation(const num::BinaryMatrix& bits, const probe::RegimeAssignment& regimes,
                               std::uint64_t seed, int binary_depth, int five_depth) {
  const auto n = static_cast<std::size_t>(bits.rows());
  if (regimes.n() != n) throw InvalidArgument("tree_validation: bits and regimes disagree in length");
  const auto top = top_quarter_labels(regimes);
  const auto split = num::train_validation_split(n, 0.8, seed);
  auto take = [&](const std::vector<std::size_t>& idx, auto label_of) {
    num::BinaryMatrix x(static_cast<Eigen::Index>(idx.size()), bits.cols());
    std::vector<int> y;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = bits.row(static_cast<Eigen::Index>(idx[i]));
      y.push_back(label_of(idx[i]));
    }
    return std::make_pair(std::move(x), std::move(y));
  };
  TreeValidation res;
  res.binary_depth = binary_depth;
  res.five_depth = five_depth;
  res.n_train = split.train.size();
  res.n_val = split.validation.size();
  auto run = [&](auto label_of, int depth, double& acc, double& base) {
    const auto [xt, yt] = take(split.train, label_of);
    const auto [xv, yv] = take(split.validation, label_of);
    const auto tree = num::cart_fit(xt, yt, depth);
    acc = num::cart_accuracy(tree, xv, yv);
    base = num::majority_baseline(yt, yv);
  };
  run([&](std::size_t i) { return static_cast<int>(top[i]); }, binary_depth, res.binary_accuracy,
      res.binary_baseline);
  run([&](std::size_t i) { return regimes.quintile(i); }, five_depth, res.five_accuracy, res.five_baseline);
  return res;
}

std::optional<int> detect_exception(const std::vector<NeuronStat>& stats, const DetectionRules& rules) {
  std::optional<int> best;
  double best_shift = -std::numeric_limits<double>::infinity();
  for (const auto& s : stats) {
    if (!(s.rate_linear < rules.exception_max_linear && s.rate_high > rules.exception_min_high)) continue;
    const double shift = s.rate_high - s.rate_linear;
    if (shift > best_shift) {
      best_shift = shift;
      best = s.neuron;
    }
  }
  return best;
}

std::vector<int> detect_consensus(const std::vector<NeuronStat>& stats, const DetectionRules& rules) {
  std::vector<const NeuronStat*> c;
  for (const auto& s : stats) {
    if (s.delta_pp < rules.consensus_max_delta_pp && s.rate_linear > rules.consensus_min_linear) c.push_back(&s);
  }
  std::stable_sort(c.begin(), c.end(), [](const NeuronStat* a, const NeuronStat* b) {
    if (a->delta_pp != b->delta_pp) return a->delta_pp < b->delta_pp;
    return a->neuron < b->neuron;
  });
  std::vector<int> out;
  for (std::size_t i = 0; i < c.size() && i < static_cast<std::size_t>(rules.consensus_max); ++i) {
    out.push_back(c[i]->neuron);
  }
  return out;
}

std::string phase_label(const LayerScan& row) {
  if (row.exception && row.monotone && (row.gateway || row.consensus.size() >= 2)) return "Decision";
  if (!row.exception && !row.gateway) return "Diffuse";
  return "Scaffold";
}

LayerScan scan_layer(const ActivationSource& source, const probe::DeltaSet& ds, double threshold,
                     const DetectionRules& rules) {
  LayerScan row;
  row.layer = ds.layer;
  row.mean_delta = ds.mean_norm;
  const auto stats = firing_stats(source, ds.regimes, threshold);
  const auto norms = source.output_norms();
  row.exception = detect_exception(stats, rules);
  row.consensus = detect_consensus(stats, rules);
  row.exclusivity = kNaN;
  if (row.exception) {
    for (const auto& s : stats) {
      if (s.neuron == *row.exception) row.exception_rate = s.rate_overall;
    }
    // Without a rule-qualified quorum the gradient is read against the most
    // strongly default-on neurons so the flag stays defined.
    std::vector<int> voters = row.consensus;
    if (voters.empty()) {
      auto ranked = stats;
      std::stable_sort(ranked.begin(), ranked.end(), [](const NeuronStat& a, const NeuronStat& b) {
        if (a.delta_pp != b.delta_pp) return a.delta_pp < b.delta_pp;
        return a.neuron < b.neuron;
      });
      for (const auto& s : ranked) {
        if (voters.size() >= static_cast<std::size_t>(rules.consensus_max)) break;
        if (s.neuron != *row.exception) voters.push_back(s.neuron);
      }
    }
    const auto profile = make_profile(source, *row.exception, voters, threshold);
    const auto summary = summarize(profile, norms);
    row.monotone = summary.handler_monotone && summary.norm_monotone;
    if (!row.consensus.empty()) row.exclusivity = summary.exclusivity;
  }
  const auto ranked = rank_by_shift(stats, Regime::Linear, Regime::Barely);
  std::vector<int> pattern;
  for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(rules.pattern_neurons); ++i) {
    pattern.push_back(ranked[i].neuron);
  }
  const auto rep = pattern_enrichment(binarize(source.activations(pattern), threshold), pattern, ds.regimes, ds.tokens,
                                      nullptr, rules.enrichment);
  row.gateway = rep.gateway;
  row.gateway_appearances = rep.gateway_appearances;
  row.phase = phase_label(row);
  return row;
}

}  // namespace switchboard::routing
