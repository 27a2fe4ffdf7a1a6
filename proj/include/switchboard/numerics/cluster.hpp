#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace switchboard::num {

struct KMeansOptions {
  int max_iter = 300;
  int n_init = 4;  // independent k-means++ restarts; lowest inertia wins
  double tol = 1e-10;  // relative inertia improvement that counts as converged
};

struct KMeansResult {
  std::vector<int> assignments;
  Eigen::MatrixXd centroids;  // k x d
  double inertia = 0.0;
  // Inertia after every assignment step of the winning restart.
  std::vector<double> inertia_history;
};

// Lloyd iterations from k-means++ seeding.  Rows of `points` are samples.  A
// cluster that empties is re-seeded at the point farthest from its centroid.
KMeansResult kmeans(const Eigen::Ref<const Eigen::MatrixXd>& points, int k, std::uint64_t seed,
                    const KMeansOptions& options = {});

std::vector<int> assign_nearest(const Eigen::Ref<const Eigen::MatrixXd>& points,
                                const Eigen::Ref<const Eigen::MatrixXd>& centroids);

// Per-cluster mean of `points`; clusters without members get a NaN row.
Eigen::MatrixXd cluster_means(const Eigen::Ref<const Eigen::MatrixXd>& points,
                              const std::vector<int>& assignments, int k);

inline constexpr Eigen::Index kSpectralPointCap = 5000;

struct SpectralOptions {
  double sigma_scale = 1.0;  // sigma = sigma_scale * median pairwise distance
  int max_iter = 2000;
  double tol = 1e-9;
};

// Normalized spectral clustering (Ng-Jordan-Weiss): Gaussian affinity,
// symmetric normalized Laplacian, k smallest eigenvectors, row-normalized,
// k-means on rows.  When the affinity graph has at least k connected
// components the components themselves are returned as clusters.
std::vector<int> spectral_cluster(const Eigen::Ref<const Eigen::MatrixXd>& points, int k,
                                  std::uint64_t seed, const SpectralOptions& options = {});

// Normalized-cut value of a 2-way partition of an affinity matrix.
double normalized_cut(const Eigen::Ref<const Eigen::MatrixXd>& affinity,
                      const std::vector<int>& assignments);

Eigen::MatrixXd gaussian_affinity(const Eigen::Ref<const Eigen::MatrixXd>& points,
                                  double sigma_scale = 1.0);

}  // namespace switchboard::num
