#include "switchboard/capture.hpp"
#include "switchboard/error.hpp"
#include "switchboard/routing.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace switchboard;
using namespace switchboard::routing;

namespace {

const std::filesystem::path kRoot = SWITCHBOARD_SOURCE_DIR;

std::filesystem::path fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("switchboard_routing_" + name);
  std::filesystem::remove_all(p);
  return p;
}

const model::ModelWeights& tiny() {
  static const auto w = model::load_weights(kRoot / "tests/fixtures/tiny_gpt2.safetensors");
  return w;
}

std::vector<tok::TokenId> random_stream(std::size_t n, int vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<tok::TokenId> s(n);
  for (auto& t : s) t = static_cast<tok::TokenId>(rng() % static_cast<std::uint64_t>(vocab));
  return s;
}

// Captures of layer 1 of the tiny model over 40 windows, with every neuron
// stored so recomputed and stored activations can be compared.
struct TinyStore {
  std::filesystem::path dir;
  std::vector<tok::TokenId> stream;
  std::unique_ptr<store::CaptureReader> reader;
};

const TinyStore& tiny_store() {
  static const TinyStore s = [] {
    TinyStore t;
    t.dir = fresh_dir("tiny");
    t.stream = random_stream(16 * 40 + 5, tiny().config.vocab, 3);
    capture::Options o;
    o.layers = {1, 0};
    o.window = 16;
    o.token_budget = t.stream.size();
    o.neurons.resize(static_cast<std::size_t>(tiny().config.d_hidden));
    std::iota(o.neurons.begin(), o.neurons.end(), 0);
    o.threads = 2;
    const auto sum = capture::capture_layers(tiny(), t.stream, o, t.dir);
    REQUIRE(sum.windows == 40);
    REQUIRE(sum.tokens == 640);
    t.reader = std::make_unique<store::CaptureReader>(t.dir, 1);
    return t;
  }();
  return s;
}

// Planted consensus structure: c ~ uniform on 0..7, the handler fires with
// probability falling in c and the output norm falls with c.
struct Planted {
  Eigen::MatrixXf acts;  // handler, then 7 consensus rows
  std::vector<float> norms;
  std::vector<int> c;
};

Planted planted(std::size_t n, std::uint64_t seed, bool independent = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u;
  Planted p;
  p.acts.resize(8, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    int c = 0;
    if (independent) {
      for (int j = 1; j <= 7; ++j) {
        const bool on = u(rng) < 0.5;
        c += on;
        p.acts(j, col) = on ? 1.0f : -0.1f;
      }
      p.acts(0, col) = u(rng) < 0.1 ? 1.0f : 0.0f;
      p.norms.push_back(static_cast<float>(50 + 10 * u(rng)));
    } else {
      c = static_cast<int>(rng() % 8);
      std::vector<int> order{1, 2, 3, 4, 5, 6, 7};
      std::shuffle(order.begin(), order.end(), rng);
      for (int j = 0; j < 7; ++j) p.acts(order[static_cast<std::size_t>(j)], col) = j < c ? 2.0f : -0.05f;
      p.acts(0, col) = u(rng) < 0.95 - 0.13 * c ? 0.8f : 0.0f;
      p.norms.push_back(static_cast<float>(200 - 18 * c + 5 * u(rng)));
    }
    p.c.push_back(c);
  }
  return p;
}

const std::vector<int> kConsensus{10, 11, 12, 13, 14, 15, 16};

}  // namespace

TEST_CASE("capture writes every requested layer in window order") {
  const auto& s = tiny_store();
  const auto& info = s.reader->info();
  CHECK(info.n_records == 640);
  CHECK(info.windows.size() == 40);
  const auto blk = s.reader->read(16 * 7, 16);
  CHECK(blk.window.front() == 7);
  CHECK(blk.tokens == std::vector<tok::TokenId>(s.stream.begin() + 112, s.stream.begin() + 128));
  store::CaptureReader l0(s.dir, 0);
  CHECK(l0.size() == 640);

  const std::span<const tok::TokenId> w(s.stream.data() + 112, 16);
  const std::array<model::HookSpec, 1> hook{model::HookSpec{1, true, true, false, false, {}}};
  const auto ref = model::forward(w, tiny(), hook);
  CHECK(blk.x == ref.captures[0].mlp_input);
  CHECK(blk.y == ref.captures[0].mlp_output);
}

TEST_CASE("windows are full and contiguous") {
  std::vector<tok::TokenId> stream(100);
  std::iota(stream.begin(), stream.end(), 0);
  const auto w = capture::make_windows(stream, 30, 100);
  REQUIRE(w.size() == 3);
  CHECK(w[2].front() == 60);
  CHECK(capture::make_windows(stream, 30, 59).size() == 1);
  CHECK_THROWS_AS(capture::make_windows(stream, 0, 10), InvalidArgument);
  capture::Options o;
  o.layers = {1, 1};
  o.window = 16;
  CHECK_THROWS_AS(capture::capture_layers(tiny(), stream, o, fresh_dir("dup")), InvalidArgument);
}

TEST_CASE("recomputed activations equal stored hidden captures") {
  const auto& s = tiny_store();
  const ActivationSource stored(*s.reader, std::nullopt);
  const ActivationSource recomputed(*s.reader, MlpInWeights::from_model(tiny(), 1));
  CHECK(stored.neuron_ids() == recomputed.neuron_ids());
  const std::vector<int> ids{5, 0, 127, 64};
  const auto a = stored.activations(ids);
  const auto b = recomputed.activations(ids);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-5f);

  // Scalar oracle for one token and neuron.
  const auto blk = s.reader->read(300, 1);
  const auto& lw = tiny().layers[1];
  double pre = lw.b_in[64];
  for (Eigen::Index j = 0; j < blk.x.rows(); ++j) pre += static_cast<double>(lw.w_in(64, j)) * blk.x(j, 0);
  const double g = 0.5 * pre * (1 + std::tanh(std::sqrt(2 / M_PI) * (pre + 0.044715 * pre * pre * pre)));
  CHECK(b(3, 300) == doctest::Approx(g).epsilon(1e-5));
  CHECK(recomputed.bias(64).value() == lw.b_in[64]);
  CHECK_FALSE(stored.bias(64).has_value());
}

TEST_CASE("missing hidden captures are reported") {
  const auto dir = fresh_dir("nohidden");
  capture::Options o;
  o.layers = {1};
  o.window = 16;
  o.neurons = {3, 9};
  const auto stream = random_stream(64, tiny().config.vocab, 4);
  o.token_budget = stream.size();
  capture::capture_layers(tiny(), stream, o, dir);
  store::CaptureReader reader(dir, 1);
  const ActivationSource src(reader, std::nullopt);
  CHECK(src.neuron_ids() == std::vector<int>{3, 9});
  CHECK(src.activations({9, 3}).rows() == 2);
  CHECK_THROWS_WITH_AS(src.activations({4}), doctest::Contains("neuron 4"), InvalidArgument);
}

TEST_CASE("firing rates match a direct count") {
  const auto& s = tiny_store();
  const ActivationSource src(*s.reader, MlpInWeights::from_model(tiny(), 1));
  std::vector<float> fake_norms(640);
  std::mt19937 rng(1);
  for (auto& v : fake_norms) v = static_cast<float>(rng() % 1000);
  const auto regimes = probe::assign_regimes(fake_norms, 1);
  const auto stats = firing_stats(src, regimes, 0.1);
  REQUIRE(stats.size() == 128);
  const auto acts = src.activations({17});
  int lin = 0, high = 0, all = 0;
  for (int t = 0; t < 640; ++t) {
    const bool on = acts(0, t) > 0.1f;
    all += on;
    lin += on && regimes.labels[t] == Regime::Linear;
    high += on && regimes.labels[t] == Regime::High;
  }
  CHECK(stats[17].rate_overall == doctest::Approx(all / 640.0));
  CHECK(stats[17].rate_linear == doctest::Approx(lin / 160.0));
  CHECK(stats[17].rate_high == doctest::Approx(high / 32.0));
  CHECK(stats[17].delta_pp == doctest::Approx(100.0 * (high / 32.0 - lin / 160.0)));
  for (const auto& st : stats) {
    CHECK(st.rate_overall >= 0.0);
    CHECK(st.rate_overall <= 1.0);
  }

  // Raising the threshold never raises a rate.
  const auto strict = firing_stats(src, regimes, 0.5);
  for (std::size_t i = 0; i < stats.size(); ++i) {
    CHECK(strict[i].rate_overall <= stats[i].rate_overall);
    CHECK(strict[i].rate_high <= stats[i].rate_high);
  }
}

TEST_CASE("a neuron held at -10 never fires") {
  const auto& s = tiny_store();
  auto w = MlpInWeights::from_model(tiny(), 1);
  w.w_in.row(7).setZero();
  w.b_in[7] = -10.0f;
  const ActivationSource src(*s.reader, w);
  std::vector<float> norms(640);
  std::iota(norms.begin(), norms.end(), 0.0f);
  const auto stats = firing_stats(src, probe::assign_regimes(norms, 1), 0.1);
  CHECK(stats[7].rate_linear == 0.0);
  CHECK(stats[7].rate_barely == 0.0);
  CHECK(stats[7].rate_high == 0.0);
  CHECK(stats[7].rate_overall == 0.0);
}

TEST_CASE("shift ranking orders by absolute change") {
  std::vector<NeuronStat> s(3);
  s[0].neuron = 5;
  s[0].rate_linear = 0.25, s[0].rate_barely = 0.5;
  s[1].neuron = 2;
  s[1].rate_linear = 0.875, s[1].rate_barely = 0.25;
  s[2].neuron = 1;
  s[2].rate_linear = 0.5, s[2].rate_barely = 0.75;
  const auto r = rank_by_shift(s, Regime::Linear, Regime::Barely);
  CHECK(r[0].neuron == 2);
  CHECK(r[1].neuron == 1);  // tie with neuron 5 at 0.25 goes to the lower id
  CHECK(r[2].neuron == 5);
}

TEST_CASE("exclusivity of identical and disjoint bit vectors") {
  Eigen::MatrixXf acts(3, 6);
  acts << 1, 1, 0, 0, 1, 0,  // handler
      1, 1, 0, 0, 1, 0,      // identical
      0, 0, 1, 1, 0, 1;      // disjoint
  const auto p = make_profile(acts, 9, {1, 2}, 0.5);
  const auto rows = exclusivity_table(p);
  CHECK(rows[0].exclusivity == 0.0);
  CHECK(rows[0].both == 3);
  CHECK(rows[1].exclusivity == 1.0);
  CHECK(rows[1].either == 6);

  Eigen::MatrixXf swapped(2, 6);
  swapped << acts.row(2), acts.row(0);
  CHECK(exclusivity_table(make_profile(swapped, 2, {9}, 0.5))[0].exclusivity == rows[1].exclusivity);
}

TEST_CASE("chi-square of a strongly anti-correlated pair") {
  const auto p = planted(20000, 2);
  const auto prof = make_profile(p.acts, 2123, kConsensus, 0.1);
  for (const auto& r : exclusivity_table(prof)) {
    // Oracle: Pearson statistic from the four cells.
    double n11 = 0, n10 = 0, n01 = 0, n00 = 0;
    for (std::size_t i = 0; i < prof.n(); ++i) {
      const bool a = prof.handler_bit[i];
      const bool b = prof.consensus_bits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r.b - 10));
      (a ? (b ? n11 : n10) : (b ? n01 : n00)) += 1;
    }
    const double n = n11 + n10 + n01 + n00;
    const double expect = n * std::pow(n11 * n00 - n10 * n01, 2) / ((n11 + n10) * (n01 + n00) * (n11 + n01) * (n10 + n00));
    CHECK(r.chi2 == doctest::Approx(expect).epsilon(1e-9));
    CHECK(r.chi2 > 1000);
  }
}

TEST_CASE("consensus counts are popcounts and rows partition tokens") {
  const auto p = planted(5000, 3);
  const auto prof = make_profile(p.acts, 2123, kConsensus, 0.1);
  for (std::size_t i = 0; i < prof.n(); ++i) CHECK(prof.count[i] == p.c[i]);
  const auto rows = gradient_rows(prof, p.norms);
  REQUIRE(rows.size() == 8);
  std::size_t total = 0;
  double pct = 0;
  for (const auto& r : rows) {
    total += r.count;
    pct += r.percent;
  }
  CHECK(total == 5000);
  CHECK(pct == doctest::Approx(100.0));
}

TEST_CASE("a planted gradient is monotone and survives the bootstrap") {
  const auto p = planted(20000, 4);
  const auto prof = make_profile(p.acts, 2123, kConsensus, 0.1);
  const auto g = consensus_gradient(prof, p.norms, 500, 9);
  CHECK(g.summary.handler_monotone);
  CHECK(g.summary.norm_monotone);
  CHECK(g.summary.range_pp == doctest::Approx(100 * (g.rows[0].handler_rate - g.rows[7].handler_rate)));
  CHECK(g.summary.norm_ratio == doctest::Approx(g.rows[0].mean_norm / g.rows[7].mean_norm));
  REQUIRE(g.bootstrap.has_value());
  CHECK(g.bootstrap->monotone_fraction >= 0.99);
  CHECK(g.bootstrap->range_pp.lo <= g.summary.range_pp);
  CHECK(g.bootstrap->range_pp.hi >= g.summary.range_pp);
  CHECK(g.bootstrap->norm_ratio.lo <= g.summary.norm_ratio);
  CHECK(g.bootstrap->range_pp.samples.size() == 500);

  const auto again = consensus_gradient(prof, p.norms, 500, 9);
  CHECK(again.bootstrap->range_pp.samples == g.bootstrap->range_pp.samples);
}

TEST_CASE("independent bits give no gradient") {
  const auto p = planted(50000, 5, true);
  const auto g = consensus_gradient(make_profile(p.acts, 1, kConsensus, 0.1), p.norms, 0);
  CHECK_FALSE(g.summary.handler_monotone);
  CHECK(g.summary.range_pp <= 15.0);
  CHECK_FALSE(g.bootstrap.has_value());
}

TEST_CASE("threshold sweep") {
  const auto p = planted(10000, 6);
  const auto rows = threshold_sweep(p.acts, 1, kConsensus, p.norms, {0.01, 0.5, 1e9});
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].summary.handler_monotone);
  // Above every activation nothing fires: all tokens sit at c = 0.
  CHECK(rows[2].summary.range_pp == 0.0);
  CHECK_FALSE(rows[2].summary.handler_monotone);
  const auto prof = make_profile(p.acts, 1, kConsensus, 1e9);
  CHECK(std::all_of(prof.count.begin(), prof.count.end(), [](auto c) { return c == 0; }));
}

TEST_CASE("empty consensus levels are marked and skipped") {
  Eigen::MatrixXf acts(3, 4);
  acts << 1, 1, 0, 0,  //
      0, 0, 1, 1,      //
      0, 0, 1, 1;
  const std::vector<float> norms{5, 5, 1, 1};
  const auto g = consensus_gradient(make_profile(acts, 0, {1, 2}, 0.5), norms, 0);
  CHECK(g.rows[1].empty);
  CHECK(std::isnan(g.rows[1].handler_rate));
  CHECK(g.summary.handler_monotone);
  CHECK(g.summary.norm_ratio == 5.0);
}

TEST_CASE("random neuron control") {
  const auto& s = tiny_store();
  const ActivationSource src(*s.reader, MlpInWeights::from_model(tiny(), 1));
  std::vector<float> dn(640);
  std::iota(dn.begin(), dn.end(), 0.0f);
  const auto regimes = probe::assign_regimes(dn, 1);
  const auto norms = src.output_norms();
  const auto stats = firing_stats(src, regimes, 0.0);

  ControlOptions o;
  o.high_min_rate = 0.5;
  o.low_min_rate = 0.0;
  o.low_max_rate = 0.45;
  o.trials = 0;
  const auto none = random_neuron_control(src, stats, norms, {}, 0.0, o);
  CHECK(none.trials.empty());
  REQUIRE(none.eligible_high >= 7);
  REQUIRE(none.eligible_low >= 1);

  // The harness scores the real ids exactly like a direct summary.
  std::vector<int> high, low;
  for (const auto& st : stats) {
    if (st.rate_overall > 0.5) high.push_back(st.neuron);
    if (st.rate_overall <= 0.45) low.push_back(st.neuron);
  }
  std::vector<int> real_ids{low[0]};
  real_ids.insert(real_ids.end(), high.begin(), high.begin() + 7);
  const std::vector<int> cons(real_ids.begin() + 1, real_ids.end());
  const auto real = summarize(make_profile(src, real_ids[0], cons, 0.0), norms);
  o.trials = 50;
  o.seed = 11;
  o.inject = real_ids;
  const auto ctl = random_neuron_control(src, stats, norms, real, 0.0, o);
  REQUIRE(ctl.trials.size() == 50);
  CHECK(ctl.trials[0].range_pp == real.range_pp);
  CHECK(ctl.trials[0].exclusivity == real.exclusivity);
  CHECK(ctl.trial_ids[0] == real_ids);
  int beat = 0;
  for (const auto& t : ctl.trials) beat += t.range_pp > real.range_pp;
  CHECK(beat == ctl.beat_range);
  for (std::size_t t = 1; t < ctl.trial_ids.size(); ++t) {
    const auto& ids = ctl.trial_ids[t];
    CHECK(std::find(low.begin(), low.end(), ids[0]) != low.end());
    for (std::size_t j = 1; j < ids.size(); ++j) CHECK(std::find(high.begin(), high.end(), ids[j]) != high.end());
  }
  const auto again = random_neuron_control(src, stats, norms, real, 0.0, o);
  CHECK(again.trial_ids == ctl.trial_ids);

  o.high_min_rate = 1.0;
  CHECK_THROWS_AS(random_neuron_control(src, stats, norms, real, 0.0, o), InvalidArgument);
}

TEST_CASE("random weight control is deterministic") {
  const auto stream = random_stream(64, 97, 8);
  const auto windows = capture::make_windows(stream, 16, 64);
  Profile p;
  p.layer = 1;
  p.handler = 3;
  p.consensus = {4, 5, 6};
  const auto a = random_weight_control(tiny().config, 77, windows, p);
  const auto b = random_weight_control(tiny().config, 77, windows, p);
  CHECK(a.tokens == 64);
  REQUIRE(a.gradient.rows.size() == 4);
  for (std::size_t c = 0; c < 4; ++c) CHECK(a.gradient.rows[c].count == b.gradient.rows[c].count);
  CHECK(a.gradient.summary.range_pp == b.gradient.summary.range_pp);
}

TEST_CASE("pattern enrichment") {
  const std::size_t n = 40000;
  std::mt19937_64 rng(12);
  std::vector<float> dn(n);
  for (auto& v : dn) v = static_cast<float>(rng() % 100000);
  const auto regimes = probe::assign_regimes(dn, 0);
  std::vector<tok::TokenId> tokens(n);
  num::BinaryMatrix bits(static_cast<Eigen::Index>(n), 4);
  for (std::size_t i = 0; i < n; ++i) {
    tokens[i] = static_cast<tok::TokenId>(i % 5);
    for (int j = 0; j < 4; ++j) bits(static_cast<Eigen::Index>(i), j) = (rng() >> 7) & 1;
  }

  SUBCASE("bits independent of regime give enrichment near one") {
    const auto rep = pattern_enrichment(bits, {1, 2, 3, 4}, regimes, tokens, nullptr);
    CHECK(rep.top.size() == 16);
    for (const auto& s : rep.top) CHECK(std::abs(s.enrichment - 1.0) < 0.25);
    CHECK(rep.aggregate == doctest::Approx(1.0));
    CHECK_FALSE(rep.gateway.has_value());
  }

  SUBCASE("a planted barely-only pattern ranks first and names the gateway") {
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      if (regimes.labels[i] == Regime::Barely && i % 4 == 0) {
        bits.row(r) << 0, 1, 0, 0;
        tokens[i] = 42;
      } else if (bits(r, 0) == 0 && bits(r, 1) == 1 && bits(r, 2) == 0 && bits(r, 3) == 0) {
        bits(r, 3) = 1;
      }
    }
    EnrichmentOptions o;
    o.top = 4;
    o.gateway_min = 3;
    const auto rep = pattern_enrichment(bits, {7, 8, 9, 10}, regimes, tokens, nullptr, o);
    REQUIRE(rep.top.size() == 4);
    CHECK(rep.top[0].bits == "0100");
    CHECK(rep.top[0].linear == 0);
    CHECK(rep.top[0].enrichment ==
          doctest::Approx((rep.top[0].barely / double(rep.n_barely)) / (1.0 / double(rep.n_linear))));
    CHECK(rep.top[0].examples.front() == "#42");
    CHECK(rep.aggregate == doctest::Approx(1.0));
  }
}

TEST_CASE("binary versus continuous on shuffled labels sits at the base rate") {
  const std::size_t n = 8000;
  std::mt19937_64 rng(13);
  std::normal_distribution<float> g;
  Eigen::MatrixXf acts(3, static_cast<Eigen::Index>(n));
  std::vector<float> dn(n), norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) acts(j, static_cast<Eigen::Index>(i)) = g(rng);
    dn[i] = acts(0, static_cast<Eigen::Index>(i)) + 0.3f * g(rng);
    norms[i] = 10 + 3 * acts(1, static_cast<Eigen::Index>(i)) + g(rng);
  }
  const auto regimes = probe::assign_regimes(dn, 0);
  const auto real = binary_vs_continuous(acts, 0.0, regimes, norms, 1);
  CHECK(real.continuous_accuracy > real.base_rate + 0.05);
  CHECK(real.continuous_r2 > real.binary_r2);
  CHECK(real.continuous_r2 > 0.8);
  const auto null = binary_vs_continuous(acts, 0.0, regimes, norms, 1, true);
  CHECK(std::abs(null.binary_accuracy - null.base_rate) < 0.02);
  CHECK(std::abs(null.continuous_accuracy - null.base_rate) < 0.02);
}

TEST_CASE("trees recover a label they are given") {
  const std::size_t n = 5000;
  std::mt19937_64 rng(14);
  std::vector<float> dn(n);
  for (auto& v : dn) v = static_cast<float>(rng() % 1000000);
  const auto regimes = probe::assign_regimes(dn, 0);
  num::BinaryMatrix bits(static_cast<Eigen::Index>(n), 4);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    bits(r, 0) = regimes.rank[i] >= n - n / 4;  // the binary label itself
    const int q = regimes.quintile(i);          // quintile in three bits
    bits(r, 1) = q & 1;
    bits(r, 2) = (q >> 1) & 1;
    bits(r, 3) = (q >> 2) & 1;
  }
  const auto t = tree_validation(bits, regimes, 3);
  CHECK(t.binary_accuracy == 1.0);
  CHECK(t.five_accuracy == 1.0);
  CHECK(t.binary_baseline == doctest::Approx(0.75).epsilon(0.05));
  CHECK(t.n_train + t.n_val == n);
}

TEST_CASE("detection rules and phase labels") {
  std::vector<NeuronStat> s(4);
  s[0] = {0, 0.01, 0.3, 0.85, 0.1, 84, {}};   // exception
  s[1] = {1, 0.03, 0.3, 0.95, 0.1, 92, {}};   // stronger exception
  s[2] = {2, 0.99, 0.8, 0.26, 0.9, -73, {}};  // consensus
  s[3] = {3, 0.60, 0.5, 0.10, 0.5, -50, {}};  // linear rate too low
  DetectionRules rules;
  CHECK(detect_exception(s, rules) == 1);
  CHECK(detect_consensus(s, rules) == std::vector<int>{2});
  rules.exception_max_linear = 0.02;
  CHECK(detect_exception(s, rules) == 0);

  LayerScan row;
  CHECK(phase_label(row) == "Diffuse");
  row.gateway = 5;
  CHECK(phase_label(row) == "Scaffold");
  row.exception = 1;
  row.monotone = true;
  CHECK(phase_label(row) == "Decision");
  row.gateway.reset();
  row.consensus = {2};
  CHECK(phase_label(row) == "Scaffold");
  row.consensus = {2, 3, 4};
  CHECK(phase_label(row) == "Decision");
}

TEST_CASE("layer scan runs end to end") {
  const auto& s = tiny_store();
  const ActivationSource src(*s.reader, MlpInWeights::from_model(tiny(), 1));
  probe::DeltaSet ds;
  ds.layer = 1;
  std::vector<float> dn(640);
  std::iota(dn.begin(), dn.end(), 0.0f);
  ds.norms = dn;
  ds.tokens.assign(s.stream.begin(), s.stream.begin() + 640);
  ds.regimes = probe::assign_regimes(dn, 1);
  ds.mean_norm = 319.5;
  const auto row = scan_layer(src, ds, 0.1);
  CHECK(row.layer == 1);
  CHECK(row.mean_delta == 319.5);
  CHECK(!row.phase.empty());
  CHECK(row.consensus.size() <= 7);
}

TEST_CASE("profiles round trip and the shipped default matches") {
  const auto p = Profile::load(kRoot / "assets/profiles/layer11.json");
  const Profile d;
  CHECK(p.to_json() == d.to_json());
  CHECK(p.handler == 2123);
  CHECK(p.consensus.size() == 7);
  auto j = d.to_json();
  j["pattern_ranking"] = "sideways";
  CHECK_THROWS_AS(Profile::from_json(j), FormatError);
  CHECK_THROWS_AS(Profile::load(kRoot / "no/such/profile.json"), FormatError);
}
