#include "switchboard/causal.hpp"
#include "switchboard/error.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

using namespace switchboard;
using namespace switchboard::causal;

namespace {

const std::filesystem::path kRoot = SWITCHBOARD_SOURCE_DIR;

const model::ModelWeights& tiny() {
  static const auto w = model::load_weights(kRoot / "tests/fixtures/tiny_gpt2.safetensors");
  return w;
}

struct Corpus {
  std::vector<tok::TokenId> stream;
  std::vector<std::span<const tok::TokenId>> windows;
  std::vector<std::uint8_t> levels;
};

const Corpus& corpus() {
  static const Corpus c = [] {
    Corpus k;
    std::mt19937_64 rng(11);
    const int T = 16, n = 12;
    k.stream.resize(static_cast<std::size_t>(T * n));
    for (auto& t : k.stream) t = static_cast<tok::TokenId>(rng() % static_cast<std::uint64_t>(tiny().config.vocab));
    for (int i = 0; i < n; ++i) {
      k.windows.emplace_back(k.stream.data() + i * T, static_cast<std::size_t>(T));
    }
    k.levels.resize(k.stream.size());
    for (auto& l : k.levels) l = static_cast<std::uint8_t>(rng() % 4);
    return k;
  }();
  return c;
}

Eigen::VectorXd log_softmax_oracle(const Eigen::VectorXf& l) {
  double m = -INFINITY;
  for (float v : l) m = std::max(m, static_cast<double>(v));
  double s = 0;
  for (float v : l) s += std::exp(v - m);
  Eigen::VectorXd out(l.size());
  for (Eigen::Index i = 0; i < l.size(); ++i) out[i] = l[i] - m - std::log(s);
  return out;
}

int rank_oracle(const Eigen::VectorXf& l, int y) {
  std::vector<int> order(static_cast<std::size_t>(l.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return l[a] > l[b]; });
  return static_cast<int>(std::find(order.begin(), order.end(), y) - order.begin()) + 1;
}

}  // namespace

TEST_CASE("compensated sum recovers small terms") {
  Sum s;
  s.add(1e16);
  for (int i = 0; i < 1000; ++i) s.add(1.0);
  s.add(-1e16);
  CHECK(s.value() == 1000.0);
}

TEST_CASE("perplexity matches losses from full logits") {
  const auto& c = corpus();
  const auto r = perplexity(tiny(), c.windows, 2);
  double sum = 0;
  std::size_t n = 0;
  for (const auto& win : c.windows) {
    const auto f = model::forward(win, tiny());
    for (double l : model::next_token_losses(f.logits, win)) {
      sum += l;
      ++n;
    }
  }
  CHECK(r.tokens == n);
  CHECK(r.tokens == c.stream.size() - c.windows.size());
  CHECK(r.mean_loss == doctest::Approx(sum / n).epsilon(1e-9));
  CHECK(r.perplexity == doctest::Approx(std::exp(sum / n)).epsilon(1e-9));
}

TEST_CASE("grouped ablation records match a fully ablated forward pass") {
  const auto& c = corpus();
  CausalOptions o;
  o.layer = 1;
  o.mode = AblationMode::Grouped;
  o.threads = 2;
  o.logit_block = 5;
  const auto recs = ablation_records(tiny(), c.windows, c.levels, 4, o);
  REQUIRE(recs.size() == c.stream.size() - c.windows.size());
  std::size_t k = 0;
  for (std::size_t wi = 0; wi < c.windows.size(); ++wi) {
    const auto win = c.windows[wi];
    const auto clean = model::forward(win, tiny());
    const auto abl = model::forward(win, tiny(), {}, model::Intervention::ablate_mlp(1));
    for (std::size_t t = 0; t + 1 < win.size(); ++t, ++k) {
      const int y = win[t + 1];
      const auto pf = log_softmax_oracle(clean.logits.col(static_cast<Eigen::Index>(t)));
      const auto pa = log_softmax_oracle(abl.logits.col(static_cast<Eigen::Index>(t)));
      double kl = 0;
      for (Eigen::Index j = 0; j < pf.size(); ++j) kl += std::exp(pf[j]) * (pf[j] - pa[j]);
      const auto& r = recs[k];
      CHECK(r.level == c.levels[wi * win.size() + t]);
      CHECK(r.loss_clean == doctest::Approx(-pf[y]).epsilon(1e-5));
      CHECK(r.loss_ablated == doctest::Approx(-pa[y]).epsilon(1e-5));
      CHECK(r.kl == doctest::Approx(std::max(0.0, kl)).epsilon(1e-4));
      CHECK(r.kl >= 0.0);
      CHECK(r.log_boost == doctest::Approx(pf[y] - pa[y]).epsilon(1e-4));
      CHECK(r.delta_rank == rank_oracle(clean.logits.col(static_cast<Eigen::Index>(t)), y) -
                                rank_oracle(abl.logits.col(static_cast<Eigen::Index>(t)), y));
    }
  }
}

TEST_CASE("masked ablation with one level equals grouped ablation") {
  const auto& c = corpus();
  const std::vector<std::uint8_t> zeros(c.stream.size(), 0);
  CausalOptions o;
  o.layer = 0;
  o.threads = 1;
  o.mode = AblationMode::Masked;
  const auto masked = ablation_records(tiny(), c.windows, zeros, 1, o);
  o.mode = AblationMode::Grouped;
  const auto grouped = ablation_records(tiny(), c.windows, zeros, 1, o);
  REQUIRE(masked.size() == grouped.size());
  for (std::size_t i = 0; i < masked.size(); ++i) {
    CHECK(masked[i].loss_ablated == doctest::Approx(grouped[i].loss_ablated).epsilon(1e-6));
  }
}

TEST_CASE("masked ablation leaves positions before the mask untouched") {
  const auto& c = corpus();
  // Level 1 only at the last predicted position of each window.
  std::vector<std::uint8_t> levels(c.stream.size(), 0);
  for (std::size_t wi = 0; wi < c.windows.size(); ++wi) levels[wi * 16 + 14] = 1;
  CausalOptions o;
  o.layer = 1;
  const auto recs = ablation_records(tiny(), c.windows, levels, 2, o);
  const auto rows = ablation_report(recs, 2);
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].count == c.windows.size());
  CHECK(rows[1].delta_pct != 0.0);
  CHECK(rows[2].level == "All");
}

TEST_CASE("report rows are token-weighted pieces of the All row") {
  const auto& c = corpus();
  CausalOptions o;
  o.layer = 1;
  o.threads = 2;
  const auto recs = ablation_records(tiny(), c.windows, c.levels, 4, o);
  const auto rows = ablation_report(recs, 4);
  const auto mech = mechanism_report(recs, 4);
  REQUIRE(rows.size() == 5);
  REQUIRE(mech.size() == 5);
  double base = 0, abl = 0, kl = 0, rank = 0;
  std::size_t n = 0;
  for (int l = 0; l < 4; ++l) {
    const auto& r = rows[static_cast<std::size_t>(l)];
    CHECK(r.level == std::to_string(l));
    CHECK(r.delta_pct == doctest::Approx((r.ablated_ppl - r.base_ppl) / r.base_ppl * 100));
    base += r.base_loss * r.count;
    abl += r.ablated_loss * r.count;
    kl += mech[static_cast<std::size_t>(l)].kl * mech[static_cast<std::size_t>(l)].count;
    rank += mech[static_cast<std::size_t>(l)].delta_rank * mech[static_cast<std::size_t>(l)].count;
    n += r.count;
  }
  CHECK(n == rows[4].count);
  CHECK(n == c.stream.size() - c.windows.size());
  CHECK(base / n == doctest::Approx(rows[4].base_loss).epsilon(1e-6));
  CHECK(abl / n == doctest::Approx(rows[4].ablated_loss).epsilon(1e-6));
  CHECK(kl / n == doctest::Approx(mech[4].kl).epsilon(1e-6));
  CHECK(rank / n == doctest::Approx(mech[4].delta_rank).epsilon(1e-6));
  for (const auto& m : mech) {
    CHECK(m.kl >= 0.0);
    // Jensen: geometric mean never exceeds the arithmetic mean.
    CHECK(m.boost_geometric <= m.boost_arithmetic * (1 + 1e-12));
  }
}

TEST_CASE("empty levels report NaN rather than zero") {
  std::vector<PositionRecord> recs(3);
  const auto rows = ablation_report(recs, 2);
  CHECK(rows[0].count == 3);
  CHECK(rows[1].count == 0);
  CHECK(std::isnan(rows[1].delta_pct));
  CHECK(rows[0].delta_pct == 0.0);
  const auto mech = mechanism_report(recs, 2);
  CHECK(std::isnan(mech[1].kl));
  CHECK(mech[0].boost_geometric == 1.0);
}

TEST_CASE("level length mismatch and out of range levels are rejected") {
  const auto& c = corpus();
  std::vector<std::uint8_t> short_levels(c.stream.size() - 1, 0);
  CHECK_THROWS_AS(ablation_records(tiny(), c.windows, short_levels, 2, {}), InvalidArgument);
  std::vector<std::uint8_t> bad(c.stream.size(), 5);
  CHECK_THROWS_AS(ablation_records(tiny(), c.windows, bad, 2, {}), InvalidArgument);
}

TEST_CASE("patching a neuron that never fires changes nothing") {
  auto w = tiny();
  w.layers[1].w_in.row(5).setZero();
  w.layers[1].b_in[5] = -100.0f;
  const auto& c = corpus();
  for (auto mode : {PatchMode::Zero, PatchMode::ClampOn}) {
    const auto rows = neuron_patch_test(w, c.windows, c.levels, 4, 1, 5, mode, 0.0f, 2);
    REQUIRE(rows.size() == 5);
    for (const auto& r : rows) CHECK(r.delta_pct == 0.0);
  }
  const auto on = neuron_patch_test(w, c.windows, c.levels, 4, 1, 5, PatchMode::ClampOn, 3.0f, 2);
  CHECK(on[4].delta_pct != 0.0);
  CHECK(std::string(patch_mode_name(PatchMode::ClampOn)) == "clamp_on");
}

TEST_CASE("replacement patch with the true MLP output is a no-op") {
  const auto& c = corpus();
  const auto& L = tiny().layers[1];
  const std::vector<std::uint8_t> mask(c.stream.size(), 1);
  const auto run = replacement_patch(tiny(), c.windows, mask, 1, [&](const Eigen::MatrixXf& x) {
    Eigen::MatrixXf h = (L.w_in * x).colwise() + L.b_in;
    model::gelu_inplace(h);
    return Eigen::MatrixXf((L.w_out * h).colwise() + L.b_out);
  });
  CHECK(run.total == c.stream.size() - c.windows.size());
  CHECK(run.masked == run.total);
  CHECK(run.patched_ppl_all == doctest::Approx(run.base_ppl_all).epsilon(1e-5));

  const auto zero = replacement_patch(tiny(), c.windows, mask, 1, [](const Eigen::MatrixXf& x) {
    return Eigen::MatrixXf::Zero(x.rows(), x.cols()).eval();
  });
  CausalOptions o;
  o.layer = 1;
  o.mode = AblationMode::Grouped;
  const auto rows = ablation_report(ablation_records(tiny(), c.windows, mask, 2, o), 2);
  CHECK(zero.patched_ppl_all == doctest::Approx(rows[2].ablated_ppl).epsilon(1e-5));
  CHECK_THROWS_AS(replacement_patch(tiny(), c.windows, std::vector<std::uint8_t>(3, 1), 1,
                                    [](const Eigen::MatrixXf& x) { return x; }),
                  InvalidArgument);
}
