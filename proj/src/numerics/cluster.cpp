#include "switchboard/numerics/cluster.hpp"

#include "switchboard/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace switchboard::num {
namespace {

double squared_distance(const Eigen::Ref<const Eigen::MatrixXd>& points, Eigen::Index i,
                        const Eigen::Ref<const Eigen::MatrixXd>& centroids, Eigen::Index c) {
  return (points.row(i) - centroids.row(c)).squaredNorm();
}

Eigen::MatrixXd plus_plus_seed(const Eigen::Ref<const Eigen::MatrixXd>& points, int k,
                               std::mt19937_64& rng) {
  const Eigen::Index n = points.rows();
  Eigen::MatrixXd centroids(k, points.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centroids.row(0) = points.row(pick(rng));
  Eigen::VectorXd nearest(n);
  for (Eigen::Index i = 0; i < n; ++i) nearest(i) = squared_distance(points, i, centroids, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 1; c < k; ++c) {
    const double total = nearest.sum();
    Eigen::Index chosen = n - 1;
    if (total > 0.0) {
      double target = unit(rng) * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= nearest(i);
        if (target <= 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    centroids.row(c) = points.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i) {
      nearest(i) = std::min(nearest(i), squared_distance(points, i, centroids, c));
    }
  }
  return centroids;
}

double assign(const Eigen::Ref<const Eigen::MatrixXd>& points, const Eigen::MatrixXd& centroids,
              std::vector<int>& assignments, Eigen::VectorXd& distances) {
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = squared_distance(points, i, centroids, c);
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    assignments[static_cast<std::size_t>(i)] = arg;
    distances(i) = best;
    inertia += best;
  }
  return inertia;
}

KMeansResult lloyd(const Eigen::Ref<const Eigen::MatrixXd>& points, int k, std::mt19937_64& rng,
                   const KMeansOptions& options) {
  const Eigen::Index n = points.rows();
  KMeansResult result;
  result.centroids = plus_plus_seed(points, k, rng);
  result.assignments.assign(static_cast<std::size_t>(n), 0);
  Eigen::VectorXd distances(n);
  double inertia = assign(points, result.centroids, result.assignments, distances);
  result.inertia_history.push_back(inertia);
  for (int iter = 0; iter < options.max_iter; ++iter) {
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = result.assignments[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        result.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        Eigen::Index far = 0;
        distances.maxCoeff(&far);
        result.centroids.row(c) = points.row(far);
        distances(far) = 0.0;
      }
    }
    const double next = assign(points, result.centroids, result.assignments, distances);
    result.inertia_history.push_back(next);
    const bool converged = inertia - next <= options.tol * std::max(inertia, 1e-300);
    inertia = next;
    if (converged) break;
  }
  result.inertia = inertia;
  return result;
}

// Connected components over edges with affinity above `eps`.
std::vector<int> components(const Eigen::MatrixXd& affinity, double eps, int& count) {
  const Eigen::Index n = affinity.rows();
  std::vector<int> label(static_cast<std::size_t>(n), -1);
  count = 0;
  std::vector<Eigen::Index> stack;
  for (Eigen::Index s = 0; s < n; ++s) {
    if (label[static_cast<std::size_t>(s)] >= 0) continue;
    label[static_cast<std::size_t>(s)] = count;
    stack.push_back(s);
    while (!stack.empty()) {
      const Eigen::Index u = stack.back();
      stack.pop_back();
      for (Eigen::Index v = 0; v < n; ++v) {
        if (label[static_cast<std::size_t>(v)] < 0 && affinity(u, v) > eps) {
          label[static_cast<std::size_t>(v)] = count;
          stack.push_back(v);
        }
      }
    }
    ++count;
  }
  return label;
}

// Top-`k` eigenvectors of a symmetric PSD matrix by block subspace iteration
// with Rayleigh-Ritz; dense solve for small problems.
Eigen::MatrixXd top_eigenvectors(const Eigen::MatrixXd& m, int k, std::mt19937_64& rng,
                                 const SpectralOptions& options) {
  const Eigen::Index n = m.rows();
  if (n <= 1500) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    return eig.eigenvectors().rightCols(k).rowwise().reverse();
  }
  const Eigen::Index block = std::min<Eigen::Index>(n, 2 * k + 8);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd q(n, block);
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = normal(rng);
  q = Eigen::HouseholderQR<Eigen::MatrixXd>(q).householderQ() * Eigen::MatrixXd::Identity(n, block);
  Eigen::VectorXd previous = Eigen::VectorXd::Zero(block);
  Eigen::MatrixXd ritz_vectors;
  for (int iter = 0; iter < options.max_iter; ++iter) {
    const Eigen::MatrixXd z = m * q;
    q = Eigen::HouseholderQR<Eigen::MatrixXd>(z).householderQ() * Eigen::MatrixXd::Identity(n, block);
    const Eigen::MatrixXd h = q.transpose() * m * q;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> small(0.5 * (h + h.transpose()));
    const Eigen::VectorXd values = small.eigenvalues().reverse();
    ritz_vectors = q * small.eigenvectors().rowwise().reverse();
    const double change = (values.head(k) - previous.head(k)).cwiseAbs().maxCoeff();
    previous = values;
    if (iter > 0 && change < options.tol) break;
  }
  return ritz_vectors.leftCols(k);
}

}  // namespace

KMeansResult kmeans(const Eigen::Ref<const Eigen::MatrixXd>& points, int k, std::uint64_t seed,
                    const KMeansOptions& options) {
  if (k < 1 || k > points.rows()) {
    throw InvalidArgument(fmt::format("kmeans: k={} must be in [1, n={}]", k, points.rows()));
  }
  std::mt19937_64 rng(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int run = 0; run < std::max(1, options.n_init); ++run) {
    KMeansResult candidate = lloyd(points, k, rng, options);
    if (candidate.inertia < best.inertia) best = std::move(candidate);
  }
  return best;
}

std::vector<int> assign_nearest(const Eigen::Ref<const Eigen::MatrixXd>& points,
                                const Eigen::Ref<const Eigen::MatrixXd>& centroids) {
  if (points.cols() != centroids.cols()) throw InvalidArgument("assign_nearest: width mismatch");
  std::vector<int> out(static_cast<std::size_t>(points.rows()), 0);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      if (!centroids.row(c).allFinite()) continue;
      const double d = squared_distance(points, i, centroids, c);
      if (d < best) {
        best = d;
        out[static_cast<std::size_t>(i)] = static_cast<int>(c);
      }
    }
  }
  return out;
}

Eigen::MatrixXd cluster_means(const Eigen::Ref<const Eigen::MatrixXd>& points,
                              const std::vector<int>& assignments, int k) {
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const int c = assignments[static_cast<std::size_t>(i)];
    sums.row(c) += points.row(i);
    ++counts[static_cast<std::size_t>(c)];
  }
  for (int c = 0; c < k; ++c) {
    const auto cnt = counts[static_cast<std::size_t>(c)];
    if (cnt > 0) {
      sums.row(c) /= static_cast<double>(cnt);
    } else {
      sums.row(c).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return sums;
}

Eigen::MatrixXd gaussian_affinity(const Eigen::Ref<const Eigen::MatrixXd>& points,
                                  double sigma_scale) {
  const Eigen::Index n = points.rows();
  const Eigen::VectorXd sq = points.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = (-2.0 * points * points.transpose()).colwise() + sq;
  d2.rowwise() += sq.transpose();
  d2 = d2.cwiseMax(0.0);
  std::vector<double> pairwise;
  pairwise.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j + 1; i < n; ++i) pairwise.push_back(d2(i, j));
  }
  double sigma = 1.0;
  if (!pairwise.empty()) {
    auto mid = pairwise.begin() + static_cast<std::ptrdiff_t>(pairwise.size() / 2);
    std::nth_element(pairwise.begin(), mid, pairwise.end());
    sigma = std::sqrt(*mid) * sigma_scale;
  }
  if (!(sigma > 0.0)) sigma = 1.0;
  Eigen::MatrixXd a = (-d2 / (2.0 * sigma * sigma)).array().exp().matrix();
  a.diagonal().setZero();
  return a;
}

double normalized_cut(const Eigen::Ref<const Eigen::MatrixXd>& affinity,
                      const std::vector<int>& assignments) {
  double cut = 0.0;
  double vol_a = 0.0;
  double vol_b = 0.0;
  const Eigen::Index n = affinity.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool in_a = assignments[static_cast<std::size_t>(i)] == 0;
    (in_a ? vol_a : vol_b) += affinity.row(i).sum();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (in_a && assignments[static_cast<std::size_t>(j)] != 0) cut += affinity(i, j);
    }
  }
  if (vol_a <= 0.0 || vol_b <= 0.0) return std::numeric_limits<double>::infinity();
  return cut / vol_a + cut / vol_b;
}

std::vector<int> spectral_cluster(const Eigen::Ref<const Eigen::MatrixXd>& points, int k,
                                  std::uint64_t seed, const SpectralOptions& options) {
  const Eigen::Index n = points.rows();
  if (n > kSpectralPointCap) {
    throw InvalidArgument(fmt::format("spectral_cluster: {} points exceeds the cap of {}; subsample first",
                                      n, kSpectralPointCap));
  }
  if (k < 1 || k > n) throw InvalidArgument("spectral_cluster: k must be in [1, n]");
  const Eigen::MatrixXd affinity = gaussian_affinity(points, options.sigma_scale);

  int n_components = 0;
  const std::vector<int> comp = components(affinity, 1e-14, n_components);
  if (n_components >= k && n_components > 1) {
    // Largest k-1 components get their own cluster; the rest share the last.
    std::vector<Eigen::Index> sizes(static_cast<std::size_t>(n_components), 0);
    for (int c : comp) ++sizes[static_cast<std::size_t>(c)];
    std::vector<int> order(static_cast<std::size_t>(n_components));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return sizes[static_cast<std::size_t>(a)] > sizes[static_cast<std::size_t>(b)];
    });
    std::vector<int> remap(static_cast<std::size_t>(n_components), k - 1);
    for (int r = 0; r < k - 1; ++r) remap[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r;
    std::vector<int> out(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = remap[static_cast<std::size_t>(comp[static_cast<std::size_t>(i)])];
    return out;
  }

  const Eigen::VectorXd degree = affinity.rowwise().sum().cwiseMax(1e-300);
  const Eigen::VectorXd inv_sqrt = degree.cwiseSqrt().cwiseInverse();
  // Eigenvalues of D^-1/2 A D^-1/2 lie in [-1, 1]; shift by I so the ones we
  // need (largest, matching the smallest of the normalized Laplacian) dominate.
  Eigen::MatrixXd m = inv_sqrt.asDiagonal() * affinity * inv_sqrt.asDiagonal();
  m.diagonal().array() += 1.0;
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd u = top_eigenvectors(m, k, rng, options);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = u.row(i).norm();
    if (norm > 0.0) u.row(i) /= norm;
  }
  return kmeans(u, k, seed ^ 0x9e3779b97f4a7c15ULL).assignments;
}

}  // namespace switchboard::num
