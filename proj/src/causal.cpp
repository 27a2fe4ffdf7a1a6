#include "switchboard/causal.hpp"

#include "switchboard/error.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <future>
#include <numeric>
#include <thread>

namespace switchboard::causal {
namespace {

unsigned thread_count(int requested) {
  return requested > 0 ? static_cast<unsigned>(requested) : std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(window index) for every window, a batch of `threads` at a time,
// and returns results in window order.
template <typename Fn>
auto for_windows(std::size_t n, int threads, Fn&& fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<R> out;
  out.reserve(n);
  const unsigned t = thread_count(threads);
  for (std::size_t begin = 0; begin < n; begin += t) {
    const std::size_t end = std::min(n, begin + t);
    std::vector<std::future<R>> jobs;
    for (std::size_t i = begin; i < end; ++i) jobs.push_back(std::async(std::launch::async, fn, i));
    for (auto& j : jobs) out.push_back(j.get());
  }
  return out;
}

Eigen::VectorXd log_softmax(const Eigen::Ref<const Eigen::VectorXf>& logits) {
  const Eigen::VectorXd l = logits.cast<double>();
  const double m = l.maxCoeff();
  const double lse = m + std::log((l.array() - m).exp().sum());
  return l.array() - lse;
}

// 1-based rank in descending logit order, ties to the lower token id.
double rank_of(const Eigen::Ref<const Eigen::VectorXf>& logits, TokenId y) {
  const float v = logits[y];
  std::int64_t above = 0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    above += logits[j] > v || (logits[j] == v && j < y);
  }
  return static_cast<double>(above + 1);
}

double loss_of(const Eigen::Ref<const Eigen::VectorXf>& logits, TokenId y) { return -log_softmax(logits)[y]; }

Eigen::MatrixXf gather_cols(const Eigen::MatrixXf& m, const std::vector<int>& cols) {
  Eigen::MatrixXf out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(cols[i]);
  return out;
}

// Logits for selected positions, in blocks, handed to fn(position, clean, other).
void paired_logits(const model::ModelWeights& w, const Eigen::MatrixXf& fh_a, const Eigen::MatrixXf& fh_b,
                   const std::vector<int>& positions, int block,
                   const std::function<void(int, const Eigen::Ref<const Eigen::VectorXf>&,
                                            const Eigen::Ref<const Eigen::VectorXf>&)>& fn) {
  for (std::size_t first = 0; first < positions.size(); first += static_cast<std::size_t>(block)) {
    const std::size_t count = std::min(positions.size() - first, static_cast<std::size_t>(block));
    const std::vector<int> cols(positions.begin() + static_cast<std::ptrdiff_t>(first),
                                positions.begin() + static_cast<std::ptrdiff_t>(first + count));
    const Eigen::MatrixXf la = w.wte.transpose() * gather_cols(fh_a, cols);
    const Eigen::MatrixXf lb = w.wte.transpose() * gather_cols(fh_b, cols);
    for (std::size_t i = 0; i < count; ++i) {
      fn(cols[i], la.col(static_cast<Eigen::Index>(i)), lb.col(static_cast<Eigen::Index>(i)));
    }
  }
}

void check_levels(const std::vector<std::span<const TokenId>>& windows, std::span<const std::uint8_t> levels,
                  int n_levels) {
  std::size_t total = 0;
  for (const auto& win : windows) total += win.size();
  if (total != levels.size()) {
    throw InvalidArgument(fmt::format("window/profile mismatch: {} tokens in the windows, {} consensus levels",
                                      total, levels.size()));
  }
  for (auto l : levels) {
    if (l >= n_levels) throw InvalidArgument(fmt::format("consensus level {} outside 0..{}", l, n_levels - 1));
  }
}

std::vector<std::size_t> window_offsets(const std::vector<std::span<const TokenId>>& windows) {
  std::vector<std::size_t> off(windows.size());
  std::size_t acc = 0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    off[i] = acc;
    acc += windows[i].size();
  }
  return off;
}

// Positions 0..T-2 of a window grouped by level.
std::vector<std::vector<int>> positions_by_level(std::span<const std::uint8_t> levels, int n_levels) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n_levels));
  for (std::size_t t = 0; t + 1 < levels.size(); ++t) out[levels[t]].push_back(static_cast<int>(t));
  return out;
}

std::vector<std::uint8_t> mask_of(const std::vector<int>& positions, std::size_t T) {
  std::vector<std::uint8_t> m(T, 0);
  for (int p : positions) m[static_cast<std::size_t>(p)] = 1;
  return m;
}

AblationRow make_row(std::string level, std::size_t count, const Sum& base, const Sum& other) {
  AblationRow r;
  r.level = std::move(level);
  r.count = count;
  if (count == 0) {
    r.base_loss = r.ablated_loss = r.base_ppl = r.ablated_ppl = r.delta_pct = std::nan("");
    return r;
  }
  r.base_loss = base.value() / static_cast<double>(count);
  r.ablated_loss = other.value() / static_cast<double>(count);
  r.base_ppl = std::exp(r.base_loss);
  r.ablated_ppl = std::exp(r.ablated_loss);
  r.delta_pct = (r.ablated_ppl - r.base_ppl) / r.base_ppl * 100.0;
  return r;
}

}  // namespace

void Sum::add(double v) {
  const double t = sum_ + v;
  if (std::abs(sum_) >= std::abs(v)) {
    comp_ += (sum_ - t) + v;
  } else {
    comp_ += (v - t) + sum_;
  }
  sum_ = t;
}

PerplexityResult perplexity(const model::ModelWeights& w, const std::vector<std::span<const TokenId>>& windows,
                            int threads) {
  if (windows.empty()) throw InvalidArgument("perplexity: no windows");
  const auto losses = for_windows(windows.size(), threads, [&](std::size_t i) {
    const auto prefix = model::run_prefix(windows[i], w, 0);
    const auto fh = model::run_suffix(prefix, w, {}, model::Intervention::none());
    return model::next_token_losses_from_hidden(w, fh, windows[i]);
  });
  Sum s;
  PerplexityResult r;
  for (const auto& win : losses) {
    for (double l : win) s.add(l);
    r.tokens += win.size();
  }
  r.mean_loss = s.value() / static_cast<double>(r.tokens);
  r.perplexity = std::exp(r.mean_loss);
  return r;
}

const char* ablation_mode_name(AblationMode m) { return m == AblationMode::Masked ? "masked" : "grouped"; }
const char* patch_mode_name(PatchMode m) { return m == PatchMode::Zero ? "zero" : "clamp_on"; }

std::vector<PositionRecord> ablation_records(const model::ModelWeights& w,
                                             const std::vector<std::span<const TokenId>>& windows,
                                             std::span<const std::uint8_t> levels, int n_levels,
                                             const CausalOptions& o) {
  check_levels(windows, levels, n_levels);
  const auto offsets = window_offsets(windows);
  const auto per_window = for_windows(windows.size(), o.threads, [&](std::size_t wi) {
    const auto tokens = windows[wi];
    const auto lv = levels.subspan(offsets[wi], tokens.size());
    const auto prefix = model::run_prefix(tokens, w, o.layer);
    const auto clean = model::run_suffix(prefix, w, {}, model::Intervention::none());
    std::vector<PositionRecord> recs(tokens.size() > 0 ? tokens.size() - 1 : 0);

    auto score = [&](const Eigen::MatrixXf& ablated, const std::vector<int>& positions) {
      paired_logits(w, clean, ablated, positions, o.logit_block,
                    [&](int t, const Eigen::Ref<const Eigen::VectorXf>& lf, const Eigen::Ref<const Eigen::VectorXf>& la) {
                      const TokenId y = tokens[static_cast<std::size_t>(t) + 1];
                      auto& r = recs[static_cast<std::size_t>(t)];
                      r.level = lv[static_cast<std::size_t>(t)];
                      const Eigen::VectorXd pf = log_softmax(lf);
                      const Eigen::VectorXd pa = log_softmax(la);
                      r.loss_clean = -pf[y];
                      r.loss_ablated = -pa[y];
                      r.log_boost = pf[y] - pa[y];
                      if (o.mechanism) {
                        const double kl = (pf.array().exp() * (pf - pa).array()).sum();
                        if (kl < -1e-9) spdlog::warn("negative KL {} at position {} clamped", kl, t);
                        r.kl = std::max(0.0, kl);
                        r.delta_rank = rank_of(lf, y) - rank_of(la, y);
                      }
                    });
    };

    if (o.mode == AblationMode::Grouped) {
      std::vector<int> all(recs.size());
      std::iota(all.begin(), all.end(), 0);
      score(model::run_suffix(prefix, w, {}, model::Intervention::ablate_mlp(o.layer)), all);
    } else {
      const auto groups = positions_by_level(lv, n_levels);
      for (const auto& g : groups) {
        if (g.empty()) continue;
        score(model::run_suffix(prefix, w, {}, model::Intervention::ablate_mlp(o.layer, mask_of(g, tokens.size()))), g);
      }
    }
    return recs;
  });
  std::vector<PositionRecord> out;
  for (auto& v : per_window) out.insert(out.end(), v.begin(), v.end());
  return out;
}

std::vector<AblationRow> ablation_report(const std::vector<PositionRecord>& records, int n_levels) {
  std::vector<Sum> base(static_cast<std::size_t>(n_levels)), abl(static_cast<std::size_t>(n_levels));
  std::vector<std::size_t> count(static_cast<std::size_t>(n_levels), 0);
  Sum base_all, abl_all;
  for (const auto& r : records) {
    base[r.level].add(r.loss_clean);
    abl[r.level].add(r.loss_ablated);
    ++count[r.level];
    base_all.add(r.loss_clean);
    abl_all.add(r.loss_ablated);
  }
  std::vector<AblationRow> rows;
  for (int c = 0; c < n_levels; ++c) {
    const auto k = static_cast<std::size_t>(c);
    rows.push_back(make_row(std::to_string(c), count[k], base[k], abl[k]));
  }
  rows.push_back(make_row("All", records.size(), base_all, abl_all));
  return rows;
}

std::vector<MechanismRow> mechanism_report(const std::vector<PositionRecord>& records, int n_levels) {
  const auto L = static_cast<std::size_t>(n_levels) + 1;  // last slot: All
  std::vector<Sum> kl(L), lb(L), boost(L), rank(L);
  std::vector<std::size_t> count(L, 0);
  for (const auto& r : records) {
    for (std::size_t k : {static_cast<std::size_t>(r.level), L - 1}) {
      kl[k].add(r.kl);
      lb[k].add(r.log_boost);
      boost[k].add(std::exp(r.log_boost));
      rank[k].add(r.delta_rank);
      ++count[k];
    }
  }
  std::vector<MechanismRow> rows;
  for (std::size_t k = 0; k < L; ++k) {
    MechanismRow m;
    m.level = k + 1 == L ? "All" : std::to_string(k);
    m.count = count[k];
    const double n = static_cast<double>(count[k]);
    m.kl = count[k] ? kl[k].value() / n : std::nan("");
    m.boost_geometric = count[k] ? std::exp(lb[k].value() / n) : std::nan("");
    m.boost_arithmetic = count[k] ? boost[k].value() / n : std::nan("");
    m.delta_rank = count[k] ? rank[k].value() / n : std::nan("");
    rows.push_back(m);
  }
  return rows;
}

std::vector<AblationRow> neuron_patch_test(const model::ModelWeights& w,
                                           const std::vector<std::span<const TokenId>>& windows,
                                           std::span<const std::uint8_t> levels, int n_levels, int layer,
                                           int neuron, PatchMode mode, float clamp_value, int threads) {
  check_levels(windows, levels, n_levels);
  const auto offsets = window_offsets(windows);
  const auto per_window = for_windows(windows.size(), threads, [&](std::size_t wi) {
    const auto tokens = windows[wi];
    const auto lv = levels.subspan(offsets[wi], tokens.size());
    const auto prefix = model::run_prefix(tokens, w, layer);
    const auto clean = model::run_suffix(prefix, w, {}, model::Intervention::none());
    std::vector<PositionRecord> recs;
    const auto groups = positions_by_level(lv, n_levels);
    for (std::size_t c = 0; c < groups.size(); ++c) {
      if (groups[c].empty()) continue;
      auto mask = mask_of(groups[c], tokens.size());
      const auto iv = mode == PatchMode::Zero ? model::Intervention::zero_neuron(layer, neuron, std::move(mask))
                                              : model::Intervention::clamp_neuron(layer, neuron, clamp_value, std::move(mask));
      const auto patched = model::run_suffix(prefix, w, {}, iv);
      paired_logits(w, clean, patched, groups[c], 128,
                    [&](int t, const Eigen::Ref<const Eigen::VectorXf>& lf, const Eigen::Ref<const Eigen::VectorXf>& lp) {
                      const TokenId y = tokens[static_cast<std::size_t>(t) + 1];
                      PositionRecord r;
                      r.level = static_cast<std::uint8_t>(c);
                      r.loss_clean = loss_of(lf, y);
                      r.loss_ablated = loss_of(lp, y);
                      recs.push_back(r);
                    });
    }
    return recs;
  });
  std::vector<PositionRecord> all;
  for (auto& v : per_window) all.insert(all.end(), v.begin(), v.end());
  return ablation_report(all, n_levels);
}

PatchRun replacement_patch(const model::ModelWeights& w, const std::vector<std::span<const TokenId>>& windows,
                           std::span<const std::uint8_t> mask, int layer,
                           const std::function<Eigen::MatrixXf(const Eigen::MatrixXf& mlp_input)>& replace) {
  std::size_t total = 0;
  for (const auto& win : windows) total += win.size();
  if (total != mask.size()) {
    throw InvalidArgument(fmt::format("replacement patch: {} tokens but {} mask entries", total, mask.size()));
  }
  const auto offsets = window_offsets(windows);
  Sum base_m, patch_m, base_a, patch_a;
  PatchRun run;
  for (std::size_t wi = 0; wi < windows.size(); ++wi) {
    const auto tokens = windows[wi];
    const auto m = mask.subspan(offsets[wi], tokens.size());
    const auto prefix = model::run_prefix(tokens, w, layer);
    model::HookSpec hook;
    hook.layer = layer;
    hook.mlp_input = true;
    const std::array<model::HookSpec, 1> hooks{hook};
    std::vector<model::Capture> caps;
    const auto clean = model::run_suffix(prefix, w, hooks, model::Intervention::none(), &caps);
    const Eigen::MatrixXf repl = replace(caps.at(0).mlp_input);
    const auto patched = model::run_suffix(
        prefix, w, {}, model::Intervention::replace_mlp_output(layer, repl, std::vector<std::uint8_t>(m.begin(), m.end())));
    const auto lc = model::next_token_losses_from_hidden(w, clean, tokens);
    const auto lp = model::next_token_losses_from_hidden(w, patched, tokens);
    for (std::size_t t = 0; t < lc.size(); ++t) {
      base_a.add(lc[t]);
      patch_a.add(lp[t]);
      ++run.total;
      if (m[t]) {
        base_m.add(lc[t]);
        patch_m.add(lp[t]);
        ++run.masked;
      }
    }
  }
  const auto ppl = [](const Sum& s, std::size_t n) { return n ? std::exp(s.value() / static_cast<double>(n)) : std::nan(""); };
  run.base_ppl_masked = ppl(base_m, run.masked);
  run.patched_ppl_masked = ppl(patch_m, run.masked);
  run.base_ppl_all = ppl(base_a, run.total);
  run.patched_ppl_all = ppl(patch_a, run.total);
  return run;
}

}  // namespace switchboard::causal
