#pragma once

#include "switchboard/moments.hpp"

#include <Eigen/Dense>

namespace switchboard::num {

// y_hat = W^T x + b, with W stored d_in x d_out so rows of a token matrix map
// as X * W.
struct LinearMap {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;

  Eigen::Index d_in() const { return W.rows(); }
  Eigen::Index d_out() const { return W.cols(); }

  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::MatrixXd apply_rows(const Eigen::Ref<const Eigen::MatrixXd>& x) const;
};

// Least-squares fit from moments via the centered normal equations
// (Cov_xx + jitter I) W = Cov_xy.  jitter is on the covariance scale.
// Throws NumericError for a singular system at jitter == 0.
LinearMap least_squares(const store::MomentAccumulator& moments, double ridge_jitter);

struct PcaBasis {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // d x k, orthonormal columns
  Eigen::VectorXd eigenvalues;  // k, descending
  Eigen::VectorXd explained_variance_ratio;
  double total_variance = 0.0;
  double dropped_variance = 0.0;  // sum of the eigenvalues not retained

  Eigen::Index dim() const { return components.rows(); }
  Eigen::Index k() const { return components.cols(); }
};

// Eigendecomposition of a symmetric covariance.  Throws InvalidArgument when
// k exceeds the numerical rank.
PcaBasis pca_fit(const Eigen::Ref<const Eigen::MatrixXd>& covariance,
                 const Eigen::Ref<const Eigen::VectorXd>& mean, Eigen::Index k);
PcaBasis pca_fit(const store::MomentAccumulator& moments_over_x, Eigen::Index k);
// Rows are samples.
PcaBasis pca_fit_rows(const Eigen::Ref<const Eigen::MatrixXd>& x, Eigen::Index k);
// As pca_fit_rows, but k is lowered to the number of eigenvalues above
// rel_tol times the largest (post-layernorm inputs lose one direction).
PcaBasis pca_fit_rows_capped(const Eigen::Ref<const Eigen::MatrixXd>& x, Eigen::Index k, double rel_tol = 1e-9);

Eigen::VectorXd pca_project(const Eigen::Ref<const Eigen::VectorXd>& x, const PcaBasis& basis);
Eigen::MatrixXd pca_project_rows(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                 const PcaBasis& basis);
Eigen::MatrixXd pca_reconstruct_rows(const Eigen::Ref<const Eigen::MatrixXd>& z,
                                     const PcaBasis& basis);

// Coefficient of determination on held-out targets, averaged over target
// columns.  Columns with zero variance are skipped and counted.
struct R2Score {
  double mean = 0.0;
  double variance_weighted = 0.0;  // 1 - sum SSE / sum SST
  Eigen::VectorXd per_dim;  // NaN for excluded columns
  int excluded = 0;
};
R2Score r2_score(const Eigen::Ref<const Eigen::MatrixXd>& y_true,
                 const Eigen::Ref<const Eigen::MatrixXd>& y_pred);

}  // namespace switchboard::num
