#include "switchboard/error.hpp"
#include "switchboard/probing.hpp"
#include "switchboard/synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <random>

using namespace switchboard;
using namespace switchboard::probe;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("switchboard_probe_" + name);
  std::filesystem::remove_all(p);
  return p;
}

// Generated once per kind and reused by every case.
struct Fixture {
  std::filesystem::path dir;
  synth::Truth truth;
  std::unique_ptr<store::CaptureReader> reader;
  DeltaSet ds;
};

const Fixture& fixture(synth::Kind kind, int d = 64) {
  static std::map<std::pair<int, int>, Fixture> cache;
  const auto key = std::make_pair(static_cast<int>(kind), d);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  Fixture f;
  f.dir = fresh_dir(std::to_string(key.first) + "_" + std::to_string(d));
  synth::Options o;
  o.kind = kind;
  o.d = d;
  o.layer = 3;
  o.seed = 42 + static_cast<std::uint64_t>(key.first);
  f.truth = synth::write_store(f.dir, o);
  f.reader = std::make_unique<store::CaptureReader>(f.dir, 3);
  f.ds = compute_delta(*f.reader);
  return cache.emplace(key, std::move(f)).first->second;
}

ProbeOptions small_options() {
  ProbeOptions o;
  o.k = 10;
  o.seed = 7;
  return o;
}

}  // namespace

TEST_CASE("regime band sizes are exact for any n, ties included") {
  std::mt19937 rng(5);
  for (std::size_t n : {1u, 7u, 20u, 99u, 100u, 1001u, 12345u}) {
    std::vector<float> norms(n);
    for (auto& v : norms) v = static_cast<float>(rng() % 13);  // heavy ties
    const auto ra = assign_regimes(norms, 0);
    CHECK(ra.count(Regime::Linear) == n / 4);
    CHECK(ra.count(Regime::Barely) == (7 * n) / 10 - n / 2);
    CHECK(ra.count(Regime::High) == n / 20);
    CHECK(ra.count(Regime::Other) == n - n / 4 - ((7 * n) / 10 - n / 2) - n / 20);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n && j < 50; ++j) {
        if (norms[i] < norms[j]) CHECK(ra.rank[i] < ra.rank[j]);
      }
    }
  }
}

TEST_CASE("nearest-rank thresholds on 1..100") {
  std::vector<float> norms;
  for (int i = 100; i >= 1; --i) norms.push_back(static_cast<float>(i));
  const auto ra = assign_regimes(norms, 4);
  CHECK(ra.thresholds.n == 100);
  CHECK(ra.thresholds.p25 == 25.0);
  CHECK(ra.thresholds.p50 == 50.0);
  CHECK(ra.thresholds.p70 == 70.0);
  CHECK(ra.thresholds.p90 == 90.0);
  CHECK(ra.thresholds.p95 == 95.0);
  CHECK(ra.quintile(0) == 4);   // norm 100
  CHECK(ra.quintile(99) == 0);  // norm 1
  CHECK(ra.in_top(0, 0.05));
  CHECK_FALSE(ra.in_top(5, 0.05));
}

TEST_CASE("a linear store leaves no residual") {
  const auto& f = fixture(synth::Kind::Linear);
  float worst = 0;
  for (float v : f.ds.norms) worst = std::max(worst, v);
  CHECK(worst <= 1e-4f);
  CHECK(f.ds.norms.size() == f.reader->size());
}

TEST_CASE("the top 5% regime captures planted bump tokens") {
  const auto& f = fixture(synth::Kind::Bump);
  std::size_t bumps = 0, caught = 0;
  for (std::size_t i = 0; i < f.truth.special.size(); ++i) {
    if (!f.truth.special[i]) continue;
    ++bumps;
    if (f.ds.regimes.labels[i] == Regime::High) ++caught;
  }
  REQUIRE(bumps == 1000);
  CHECK(static_cast<double>(caught) / static_cast<double>(bumps) >= 0.9);

  const auto cls = token_class_filter(f.ds, {7}, "bump token");
  CHECK(cls.indices.size() == bumps);
}

TEST_CASE("too few tokens for the layer width is an error") {
  const auto dir = fresh_dir("tiny");
  synth::Options o;
  o.d = 64;
  o.n = 639;
  synth::write_store(dir, o);
  store::CaptureReader reader(dir, 0);
  CHECK_THROWS_AS(compute_delta(reader), InvalidArgument);
}

TEST_CASE("planted cubic is recovered by a degree-3 probe") {
  const auto& f = fixture(synth::Kind::PlantedCubic);
  const auto data = prepare_probe_data(*f.reader, f.ds, top_fraction_filter(f.ds, 0.10), small_options());
  CHECK(data.n_filtered == 2000);
  CHECK(data.train_records.size() == 1600);
  CHECK(data.val_records.size() == 400);
  const auto cubic = fit_probe(data, 3, 10, 1.0);
  CHECK(cubic.k_effective == 10);
  CHECK(cubic.val_r2 >= 0.9);
  CHECK(cubic.train_r2 >= cubic.val_r2);
  const auto linear = fit_probe(data, 1, 10, 1.0);
  CHECK(linear.val_r2 < cubic.val_r2 - 0.3);
}

TEST_CASE("whitened inputs have unit variance and leading blocks nest") {
  const auto& f = fixture(synth::Kind::PlantedCubic);
  auto o = small_options();
  const auto data = prepare_probe_data(*f.reader, f.ds, top_fraction_filter(f.ds, 0.10), o);
  const Eigen::MatrixXd c = data.z_train.rowwise() - data.z_train.colwise().mean();
  const Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(c.rows());
  CHECK((cov - Eigen::MatrixXd::Identity(cov.rows(), cov.cols())).cwiseAbs().maxCoeff() < 1e-8);

  o.k = 4;
  const auto narrow = prepare_probe_data(*f.reader, f.ds, top_fraction_filter(f.ds, 0.10), o);
  for (Eigen::Index j = 0; j < 4; ++j) {
    const double s = narrow.z_train.col(j).dot(data.z_train.col(j)) > 0 ? 1.0 : -1.0;
    CHECK((narrow.z_train.col(j) - s * data.z_train.col(j)).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("one cluster reduces to the plain probe") {
  const auto& f = fixture(synth::Kind::PlantedCubic);
  const auto data = prepare_probe_data(*f.reader, f.ds, top_fraction_filter(f.ds, 0.10), small_options());
  const auto plain = fit_probe(data, 3, 10, 1.0);
  BranchOptions bo;
  bo.n_clusters = 1;
  bo.k = 10;
  const auto one = branch_detect(data, BranchMethod::KMeansInput, bo);
  REQUIRE(one.cluster_val_r2[0].has_value());
  CHECK(std::abs(one.average_val_r2 - plain.val_r2) <= 0.01);
  CHECK(one.best_val_r2 == one.average_val_r2);

  const auto pp = poly_probe(*f.reader, f.ds, top_fraction_filter(f.ds, 0.10), 3, small_options());
  CHECK(pp.val_r2 == doctest::Approx(plain.val_r2));
}

TEST_CASE("two branches are found by input clustering") {
  const auto& f = fixture(synth::Kind::TwoBranch, 16);
  const auto data = prepare_probe_data(*f.reader, f.ds, top_fraction_filter(f.ds, 0.10), small_options());
  BranchOptions bo;
  bo.n_clusters = 2;
  bo.k = 10;
  const auto br = branch_detect(data, BranchMethod::KMeansInput, bo);
  CHECK(br.best_val_r2 >= 0.8);
  CHECK(br.best_val_r2 >= br.average_val_r2);
  CHECK(br.average_val_r2 > fit_probe(data, 3, 10, 1.0).val_r2);

  for (auto m : {BranchMethod::KMeansDeltaDir, BranchMethod::KMeansJoint, BranchMethod::SpectralDeltaDir}) {
    const auto r = branch_detect(data, m, bo);
    CHECK(r.method == branch_method_name(m));
    CHECK(r.cluster_val_r2.size() == 2);
    if (std::isfinite(r.best_val_r2)) CHECK(r.best_val_r2 >= r.average_val_r2);
  }
}

TEST_CASE("shuffled cluster labels on structureless residuals score nothing") {
  const auto& f = fixture(synth::Kind::Noise);
  const auto data = prepare_probe_data(*f.reader, f.ds, top_fraction_filter(f.ds, 0.10), small_options());
  BranchOptions bo;
  bo.k = 10;
  bo.shuffled = true;
  const auto r = branch_detect(data, BranchMethod::KMeansInput, bo);
  CHECK(r.shuffled);
  CHECK(r.average_val_r2 <= 0.02);
}

TEST_CASE("clusters with too few held-out tokens are unavailable") {
  const auto& f = fixture(synth::Kind::Noise);
  const auto data = prepare_probe_data(*f.reader, f.ds, top_fraction_filter(f.ds, 0.10), small_options());
  BranchOptions bo;
  bo.k = 4;
  bo.degree = 1;
  bo.n_clusters = 16;  // about 25 held-out tokens each
  const auto r = branch_detect(data, BranchMethod::KMeansInput, bo);
  for (std::size_t c = 0; c < r.cluster_val_r2.size(); ++c) {
    CHECK(r.cluster_val_r2[c].has_value() == (r.cluster_val_n[c] >= 50));
  }
}

TEST_CASE("a linear store gives a flat grid") {
  const auto& f = fixture(synth::Kind::Linear);
  const auto data = prepare_probe_data(*f.reader, f.ds, top_fraction_filter(f.ds, 0.10), small_options());
  for (const auto& r : hyperparam_grid(data, {1, 2, 3}, {5, 10}, {0.1, 10.0})) {
    CHECK(r.val_r2 <= 0.05);
  }
}

TEST_CASE("context augmentation widens the inputs") {
  const auto& f = fixture(synth::Kind::PlantedCubic);
  auto o = small_options();
  o.context_radius = 1;
  const auto data = prepare_probe_data(*f.reader, f.ds, top_fraction_filter(f.ds, 0.10), o);
  CHECK(data.z_train.cols() == 30);
  const auto r = fit_probe(data, 2, 10, 1.0);
  CHECK(r.k_effective == 10);
  CHECK(r.n_features == 496);  // C(32, 2)
}

TEST_CASE("filters that match too little are rejected") {
  const auto& f = fixture(synth::Kind::PlantedCubic);
  const auto none = token_class_filter(f.ds, {5}, "never");
  CHECK(none.indices.empty());
  CHECK_THROWS_AS(prepare_probe_data(*f.reader, f.ds, none, small_options()), InvalidArgument);
  CHECK_THROWS_AS(parse_branch_method("kmeans_output"), InvalidArgument);
  CHECK(parse_branch_method("spectral_delta_dir") == BranchMethod::SpectralDeltaDir);
}

TEST_CASE("regime filters partition the store") {
  const auto& f = fixture(synth::Kind::Bump);
  std::size_t total = 0;
  for (auto r : {Regime::Linear, Regime::Barely, Regime::High, Regime::Other}) {
    total += regime_filter(f.ds, r).indices.size();
  }
  CHECK(total == f.ds.norms.size());
  CHECK(top_fraction_filter(f.ds, 0.05).indices == regime_filter(f.ds, Regime::High).indices);
}

TEST_CASE("delta sets survive a save and load") {
  const auto& f = fixture(synth::Kind::Bump);
  const auto dir = fresh_dir("saved");
  save_delta_set(f.ds, dir);
  const auto back = load_delta_set(dir, 3);
  CHECK(back.norms == f.ds.norms);
  CHECK(back.tokens == f.ds.tokens);
  CHECK(back.map.W == f.ds.map.W);
  CHECK(back.map.b == f.ds.map.b);
  CHECK(back.regimes.labels == f.ds.regimes.labels);
  CHECK(back.mean_norm == f.ds.mean_norm);
  CHECK_THROWS_AS(load_delta_set(dir, 4), FormatError);
}

TEST_CASE("class id lists for real vocabularies") {
  const std::string root = SWITCHBOARD_SOURCE_DIR;
  const auto vocab = tok::BpeVocab::load(root + "/assets/gpt2/vocab.json", root + "/assets/gpt2/merges.txt");
  const auto para = paragraph_boundary_ids(vocab);
  CHECK(std::binary_search(para.begin(), para.end(), 198));  // "\n"
  CHECK(std::binary_search(para.begin(), para.end(), 628));  // "\n\n"
  CHECK_FALSE(std::binary_search(para.begin(), para.end(), 220));  // " "
  const auto fw = function_word_ids(vocab);
  CHECK(std::binary_search(fw.begin(), fw.end(), 262));  // " the"
  CHECK(fw.size() >= 40);
}
