#include "switchboard/capture_store.hpp"
#include "switchboard/error.hpp"
#include "switchboard/numerics/linear.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>

using namespace switchboard;
using namespace switchboard::store;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("switchboard_store_" + name);
  std::filesystem::remove_all(p);
  return p;
}

CaptureChunk random_chunk(int layer, std::uint32_t window, int T, int d, int k, std::mt19937& rng) {
  std::normal_distribution<float> nd;
  CaptureChunk c;
  c.layer = layer;
  c.window = window;
  for (int t = 0; t < T; ++t) c.tokens.push_back(static_cast<TokenId>(rng() % 50257));
  c.x.resize(d, T);
  c.y.resize(d, T);
  c.hidden.resize(k, T);
  for (Eigen::Index i = 0; i < c.x.size(); ++i) c.x.data()[i] = nd(rng);
  for (Eigen::Index i = 0; i < c.y.size(); ++i) c.y.data()[i] = nd(rng);
  for (Eigen::Index i = 0; i < c.hidden.size(); ++i) c.hidden.data()[i] = nd(rng);
  return c;
}

double rel_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("write then read is bitwise") {
  const auto dir = fresh_dir("roundtrip");
  std::mt19937 rng(1);
  const auto a = random_chunk(3, 0, 7, 5, 2, rng);
  const auto b = random_chunk(3, 1, 4, 5, 2, rng);
  {
    CaptureWriter w(dir, 3, 5, {10, 20}, {{"model", "test"}});
    w.append(a);
    w.append(b);
    w.finish();
  }
  CaptureReader r(dir, 3);
  CHECK(r.size() == 11);
  CHECK(r.info().neurons == std::vector<int>{10, 20});
  CHECK(r.info().provenance["model"] == "test");
  const auto all = r.read(0, 11);
  CHECK(all.x.leftCols(7) == a.x);
  CHECK(all.y.rightCols(4) == b.y);
  CHECK(all.hidden.leftCols(7) == a.hidden);
  CHECK(std::vector<TokenId>(all.tokens.begin(), all.tokens.begin() + 7) == a.tokens);
  CHECK(all.window[8] == 1);
  CHECK(all.position[8] == 1);

  const auto g = r.gather({2, 9});
  CHECK(g.x.col(0) == a.x.col(2));
  CHECK(g.x.col(1) == b.x.col(2));

  std::uint64_t seen = 0;
  r.scan([&](const RecordBlock& blk) {
    CHECK(blk.first == seen);
    CHECK(blk.x == all.x.middleCols(static_cast<Eigen::Index>(blk.first), static_cast<Eigen::Index>(blk.size())));
    seen += blk.size();
  }, 3);
  CHECK(seen == 11);
}

TEST_CASE("hand-made moments") {
  const auto dir = fresh_dir("hand");
  CaptureChunk c;
  c.layer = 0;
  c.tokens = {1, 2, 3};
  c.x.resize(2, 3);
  c.x << 1, 0, 1,
         0, 1, 1;
  c.y = c.x;
  {
    CaptureWriter w(dir, 0, 2, {});
    w.append(c);
    w.finish();
  }
  const auto m = accumulate_moments(CaptureReader(dir, 0));
  Eigen::Matrix2d want;
  want << 2, 1, 1, 2;
  CHECK(m.xtx == want);
  CHECK(m.n == 3);
}

TEST_CASE("moments do not depend on chunking or window order") {
  std::mt19937 rng(2);
  std::vector<CaptureChunk> chunks;
  for (std::uint32_t w = 0; w < 6; ++w) chunks.push_back(random_chunk(1, w, 50 + static_cast<int>(w), 8, 0, rng));

  auto moments_for = [&](const std::vector<std::size_t>& order, const std::string& name) {
    const auto dir = fresh_dir(name);
    CaptureWriter w(dir, 1, 8, {});
    for (auto i : order) w.append(chunks[i]);
    w.finish();
    return accumulate_moments(CaptureReader(dir, 1));
  };
  const auto a = moments_for({0, 1, 2, 3, 4, 5}, "order_a");
  const auto b = moments_for({5, 3, 1, 0, 2, 4}, "order_b");
  CHECK(a.n == b.n);
  CHECK(rel_diff(a.xtx, b.xtx) <= 1e-6);
  CHECK(rel_diff(a.xty, b.xty) <= 1e-6);
  CHECK(rel_diff(a.sum_x, b.sum_x) <= 1e-6);

  // One accumulator over everything in memory vs the two-block store scan.
  MomentAccumulator direct(8, 8);
  for (const auto& c : chunks) direct.add_rows(Eigen::MatrixXf(c.x.transpose()), Eigen::MatrixXf(c.y.transpose()));
  CHECK(rel_diff(a.xtx, direct.xtx) <= 1e-6);
}

TEST_CASE("exact linear data gives back the map") {
  const auto dir = fresh_dir("linear");
  std::mt19937 rng(3);
  auto c = random_chunk(0, 0, 200, 4, 0, rng);
  c.y = 2.0f * c.x;
  {
    CaptureWriter w(dir, 0, 4, {});
    w.append(c);
    w.finish();
  }
  const auto map = num::least_squares(accumulate_moments(CaptureReader(dir, 0)), 0.0);
  CHECK((map.W - 2.0 * Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(map.b.cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("projected moments equal moments of projected inputs") {
  const auto dir = fresh_dir("proj");
  std::mt19937 rng(4);
  const auto c = random_chunk(0, 0, 40, 6, 0, rng);
  {
    CaptureWriter w(dir, 0, 6, {});
    w.append(c);
    w.finish();
  }
  Eigen::MatrixXd P = Eigen::MatrixXd::Random(6, 2);
  Eigen::VectorXd mu = Eigen::VectorXd::Random(6);
  const auto m = accumulate_moments(CaptureReader(dir, 0), P, mu);
  Eigen::MatrixXd z = P.transpose() * (c.x.cast<double>().colwise() - mu);
  MomentAccumulator want(2, 6);
  want.add_rows(Eigen::MatrixXd(z.transpose()), Eigen::MatrixXd(c.y.cast<double>().transpose()));
  CHECK(rel_diff(m.xtx, want.xtx) <= 1e-12);
  CHECK(rel_diff(m.xty, want.xty) <= 1e-12);
  CHECK_THROWS_AS(accumulate_moments(CaptureReader(dir, 0), Eigen::MatrixXd::Zero(5, 2)), InvalidArgument);
}

TEST_CASE("merging disjoint writers keeps every window in order") {
  std::mt19937 rng(5);
  const auto d1 = fresh_dir("merge1"), d2 = fresh_dir("merge2"), out = fresh_dir("merged");
  const auto w0 = random_chunk(2, 0, 5, 3, 1, rng), w1 = random_chunk(2, 1, 6, 3, 1, rng);
  const auto w2 = random_chunk(2, 2, 7, 3, 1, rng), w3 = random_chunk(2, 3, 8, 3, 1, rng);
  {
    CaptureWriter a(d1, 2, 3, {9});
    a.append(w2);
    a.append(w0);
    a.finish();
    CaptureWriter b(d2, 2, 3, {9});
    b.append(w3);
    b.append(w1);
    b.finish();
  }
  merge_stores({d1, d2}, 2, out);
  CaptureReader r(out, 2);
  CHECK(r.size() == 26);
  REQUIRE(r.info().windows.size() == 4);
  for (std::uint32_t i = 0; i < 4; ++i) CHECK(r.info().windows[i].id == i);
  CHECK(r.read(0, 5).x == w0.x);
  CHECK(r.read(5, 6).hidden == w1.hidden);
  CHECK(r.read(18, 8).y == w3.y);

  CHECK_THROWS_AS(merge_stores({d1, d1}, 2, fresh_dir("merge_dup")), InvalidArgument);
}

TEST_CASE("writer errors") {
  const auto dir = fresh_dir("errors");
  std::mt19937 rng(6);
  CaptureWriter w(dir, 4, 3, {});
  CHECK_THROWS_AS(w.append(random_chunk(5, 0, 2, 3, 0, rng)), InvalidArgument);
  CHECK_THROWS_AS(w.append(random_chunk(4, 0, 2, 4, 0, rng)), InvalidArgument);
  w.append(random_chunk(4, 0, 2, 3, 0, rng));
  CHECK_THROWS_AS(w.append(random_chunk(4, 0, 2, 3, 0, rng)), InvalidArgument);
}

TEST_CASE("an unfinished writer leaves no store") {
  const auto dir = fresh_dir("unfinished");
  std::mt19937 rng(7);
  {
    CaptureWriter w(dir, 0, 3, {});
    w.append(random_chunk(0, 0, 2, 3, 0, rng));
  }
  CHECK_THROWS_AS(CaptureReader(dir, 0), FormatError);
  CHECK(std::filesystem::is_empty(dir));
}

TEST_CASE("reader rejects a truncated data file") {
  const auto dir = fresh_dir("trunc");
  std::mt19937 rng(8);
  {
    CaptureWriter w(dir, 0, 3, {});
    w.append(random_chunk(0, 0, 4, 3, 0, rng));
    w.finish();
  }
  std::filesystem::resize_file(capture_path(dir, 0), 30);
  CHECK_THROWS_AS(CaptureReader(dir, 0), FormatError);
}

TEST_CASE("store size at full scale") {
  StoreInfo s;
  s.d_model = 768;
  const double bytes = 500000.0 * static_cast<double>(s.record_bytes());
  // x and y in f32 alone: 500,000 x 768 x 4 x 2.
  CHECK(bytes == doctest::Approx(500000.0 * 768 * 4 * 2).epsilon(0.01));
  CHECK(bytes == doctest::Approx(3.1e9).epsilon(0.02));
}
