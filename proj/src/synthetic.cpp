#include "switchboard/synthetic.hpp"

#include "switchboard/capture_store.hpp"
#include "switchboard/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <numeric>
#include <random>

namespace switchboard::synth {
namespace {

struct Monomial {
  std::array<int, 3> power{};
};

// All monomials of degree 2 and 3 in three variables.
std::vector<Monomial> cubic_terms() {
  std::vector<Monomial> out;
  for (int a = 0; a <= 3; ++a) {
    for (int b = 0; a + b <= 3; ++b) {
      for (int c = 0; a + b + c <= 3; ++c) {
        if (a + b + c >= 2) out.push_back({{a, b, c}});
      }
    }
  }
  return out;
}

struct Cubic {
  std::vector<Monomial> terms;
  Eigen::MatrixXd directions;  // d x terms, scaled by coefficient

  Eigen::VectorXd operator()(const double* u) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(directions.rows());
    for (std::size_t m = 0; m < terms.size(); ++m) {
      double phi = 1.0;
      for (int j = 0; j < 3; ++j) {
        for (int p = 0; p < terms[m].power[j]; ++p) phi *= u[j];
      }
      out += phi * directions.col(static_cast<Eigen::Index>(m));
    }
    return out;
  }
};

Eigen::VectorXd gaussian_vector(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v[i] = g(rng);
  return v;
}

Cubic random_cubic(int d, std::mt19937_64& rng) {
  Cubic c;
  c.terms = cubic_terms();
  c.directions.resize(d, static_cast<Eigen::Index>(c.terms.size()));
  std::uniform_real_distribution<double> coef(0.5, 1.5);
  for (Eigen::Index m = 0; m < c.directions.cols(); ++m) {
    c.directions.col(m) = gaussian_vector(d, rng).normalized() * coef(rng);
  }
  return c;
}

}  // namespace

Truth write_store(const std::filesystem::path& dir, const Options& o) {
  if (o.d < 4) throw InvalidArgument("synthetic store: d must be at least 4");
  if (o.n == 0 || o.window_len == 0) throw InvalidArgument("synthetic store: empty store");
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> g;

  Eigen::VectorXd scale = Eigen::VectorXd::Ones(o.d);
  scale.head(3) << 4.0, 3.5, 3.0;
  const Eigen::MatrixXd w = Eigen::MatrixXd::NullaryExpr(o.d, o.d, [&] { return g(rng); }) / std::sqrt(o.d);
  const Eigen::VectorXd b = gaussian_vector(o.d, rng) * 0.1;
  const Cubic cubic_a = random_cubic(o.d, rng);
  const Cubic cubic_b = random_cubic(o.d, rng);
  const Eigen::VectorXd bump_u = gaussian_vector(o.d, rng).normalized();
  const Eigen::VectorXd bump_v = gaussian_vector(o.d, rng).normalized() * o.bump_amplitude;

  Truth truth;
  truth.special.assign(o.n, 0);
  if (o.kind == Kind::Bump) {
    std::vector<std::size_t> idx(o.n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto m = static_cast<std::size_t>(o.bump_fraction * static_cast<double>(o.n));
    for (std::size_t i = 0; i < m; ++i) truth.special[idx[i]] = 1;
  }
  std::uniform_int_distribution<int> token(8, 999);

  store::CaptureWriter writer(dir, o.layer, o.d, {}, {{"generator", "synthetic"}, {"seed", o.seed}});
  std::size_t done = 0;
  for (std::uint32_t window = 0; done < o.n; ++window) {
    const auto t = static_cast<Eigen::Index>(std::min<std::size_t>(o.window_len, o.n - done));
    store::CaptureChunk chunk;
    chunk.layer = o.layer;
    chunk.window = window;
    chunk.x.resize(o.d, t);
    chunk.y.resize(o.d, t);
    for (Eigen::Index c = 0; c < t; ++c) {
      const std::size_t i = done + static_cast<std::size_t>(c);
      Eigen::VectorXd x = gaussian_vector(o.d, rng).cwiseProduct(scale);
      Eigen::VectorXd nl = Eigen::VectorXd::Zero(o.d);
      switch (o.kind) {
        case Kind::Linear:
          break;
        case Kind::Bump:
          if (truth.special[i]) nl = (x.dot(bump_u) >= 0 ? 1.0 : -1.0) * bump_v;
          break;
        case Kind::PlantedCubic: {
          const std::array<double, 3> u{x[0] / scale[0], x[1] / scale[1], x[2] / scale[2]};
          nl = cubic_a(u.data());
          break;
        }
        case Kind::TwoBranch: {
          x[0] = (g(rng) >= 0 ? 3.0 : -3.0) + g(rng);
          const std::array<double, 3> u{x[1] / scale[1], x[2] / scale[2], x[3] / scale[3]};
          truth.special[i] = x[0] > 0;
          nl = x[0] > 0 ? cubic_a(u.data()) : cubic_b(u.data());
          break;
        }
        case Kind::Noise:
          nl = gaussian_vector(o.d, rng);
          break;
      }
      if (o.kind != Kind::Linear) nl += gaussian_vector(o.d, rng) * o.noise;
      chunk.x.col(c) = x.cast<float>();
      chunk.y.col(c) = (w * x + b + nl).cast<float>();
      chunk.tokens.push_back(truth.special[i] && o.kind == Kind::Bump ? 7 : token(rng));
    }
    writer.append(chunk);
    done += static_cast<std::size_t>(t);
  }
  writer.finish();
  return truth;
}

}  // namespace switchboard::synth
