#include "switchboard/numerics/linear.hpp"

#include "switchboard/error.hpp"

#include <optional>
#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>

namespace switchboard::num {

Eigen::VectorXd LinearMap::apply(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return W.transpose() * x + b;
}

Eigen::MatrixXd LinearMap::apply_rows(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
  Eigen::MatrixXd out = x * W;
  out.rowwise() += b.transpose();
  return out;
}

LinearMap least_squares(const store::MomentAccumulator& moments, double ridge_jitter) {
  if (moments.n <= moments.d_in()) {
    throw InvalidArgument(fmt::format("least squares needs more tokens ({}) than input dims ({})",
                                      moments.n, moments.d_in()));
  }
  Eigen::MatrixXd cxx = moments.covariance_xx();
  cxx.diagonal().array() += ridge_jitter;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(cxx);
  const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
  const double dmax = d.maxCoeff();
  if (ldlt.info() != Eigen::Success || dmax <= 0.0 || d.minCoeff() <= 1e-12 * dmax) {
    throw NumericError(
        "normal equations are singular; pass a positive ridge_jitter to regularize the fit");
  }
  LinearMap map;
  map.W = ldlt.solve(moments.covariance_xy());
  map.b = moments.mean_y() - map.W.transpose() * moments.mean_x();
  return map;
}

namespace {

// cap_tol set: k is lowered to the number of eigenvalues above cap_tol * top.
PcaBasis fit_covariance(const Eigen::Ref<const Eigen::MatrixXd>& covariance,
                        const Eigen::Ref<const Eigen::VectorXd>& mean, Eigen::Index k,
                        std::optional<double> cap_tol) {
  const Eigen::Index d = covariance.rows();
  if (covariance.cols() != d || mean.size() != d) {
    throw InvalidArgument("pca_fit: covariance must be square and match the mean");
  }
  if (k < 1 || k > d) {
    throw InvalidArgument(fmt::format("pca_fit: k={} outside [1, {}]", k, d));
  }
  if (!covariance.allFinite()) {
    throw NumericError("pca_fit: covariance has non-finite entries");
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (covariance + covariance.transpose()));
  if (eig.info() != Eigen::Success) {
    throw NumericError("pca_fit: eigendecomposition failed");
  }
  // Eigen returns ascending order.
  const Eigen::VectorXd values = eig.eigenvalues().reverse();
  const double top = std::max(values(0), 0.0);
  const double tol = top * static_cast<double>(d) * std::numeric_limits<double>::epsilon() * 16.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    if (values(i) > tol) ++rank;
  }
  if (cap_tol) {
    Eigen::Index usable = 0;
    for (Eigen::Index i = 0; i < d; ++i) {
      if (values(i) > std::max(tol, *cap_tol * top)) ++usable;
    }
    k = std::max<Eigen::Index>(1, std::min(k, usable));
  }
  if (k > rank) {
    throw InvalidArgument(fmt::format("pca_fit: k={} exceeds covariance rank {}", k, rank));
  }

  PcaBasis basis;
  basis.mean = mean;
  basis.components = eig.eigenvectors().rowwise().reverse().leftCols(k);
  basis.eigenvalues = values.head(k);
  basis.total_variance = values.cwiseMax(0.0).sum();
  basis.dropped_variance = values.tail(d - k).cwiseMax(0.0).sum();
  basis.explained_variance_ratio = basis.eigenvalues / basis.total_variance;
  // Deterministic sign: largest-magnitude loading of each component is positive.
  for (Eigen::Index j = 0; j < k; ++j) {
    Eigen::Index idx = 0;
    basis.components.col(j).cwiseAbs().maxCoeff(&idx);
    if (basis.components(idx, j) < 0) basis.components.col(j) *= -1.0;
  }
  return basis;
}

Eigen::MatrixXd row_covariance(const Eigen::Ref<const Eigen::MatrixXd>& x, Eigen::VectorXd& mean) {
  if (x.rows() < 2) throw InvalidArgument("pca_fit_rows: need at least two samples");
  mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  return (centered.transpose() * centered) / static_cast<double>(x.rows());
}

}  // namespace

PcaBasis pca_fit(const Eigen::Ref<const Eigen::MatrixXd>& covariance,
                 const Eigen::Ref<const Eigen::VectorXd>& mean, Eigen::Index k) {
  return fit_covariance(covariance, mean, k, std::nullopt);
}

PcaBasis pca_fit(const store::MomentAccumulator& moments_over_x, Eigen::Index k) {
  return pca_fit(moments_over_x.covariance_xx(), moments_over_x.mean_x(), k);
}

PcaBasis pca_fit_rows(const Eigen::Ref<const Eigen::MatrixXd>& x, Eigen::Index k) {
  Eigen::VectorXd mean;
  const Eigen::MatrixXd cov = row_covariance(x, mean);
  return fit_covariance(cov, mean, k, std::nullopt);
}

PcaBasis pca_fit_rows_capped(const Eigen::Ref<const Eigen::MatrixXd>& x, Eigen::Index k, double rel_tol) {
  Eigen::VectorXd mean;
  const Eigen::MatrixXd cov = row_covariance(x, mean);
  return fit_covariance(cov, mean, k, rel_tol);
}

Eigen::VectorXd pca_project(const Eigen::Ref<const Eigen::VectorXd>& x, const PcaBasis& basis) {
  return basis.components.transpose() * (x - basis.mean);
}

Eigen::MatrixXd pca_project_rows(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                 const PcaBasis& basis) {
  return (x.rowwise() - basis.mean.transpose()) * basis.components;
}

Eigen::MatrixXd pca_reconstruct_rows(const Eigen::Ref<const Eigen::MatrixXd>& z,
                                     const PcaBasis& basis) {
  Eigen::MatrixXd out = z * basis.components.transpose();
  out.rowwise() += basis.mean.transpose();
  return out;
}

R2Score r2_score(const Eigen::Ref<const Eigen::MatrixXd>& y_true,
                 const Eigen::Ref<const Eigen::MatrixXd>& y_pred) {
  if (y_true.rows() != y_pred.rows() || y_true.cols() != y_pred.cols()) {
    throw InvalidArgument("r2_score: shape mismatch");
  }
  R2Score score;
  score.per_dim = Eigen::VectorXd::Constant(y_true.cols(), std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  double sse_total = 0.0, sst_total = 0.0;
  int used = 0;
  for (Eigen::Index j = 0; j < y_true.cols(); ++j) {
    const double mean = y_true.col(j).mean();
    const double sst = (y_true.col(j).array() - mean).square().sum();
    if (!(sst > 1e-12 * static_cast<double>(y_true.rows()))) {
      ++score.excluded;
      continue;
    }
    const double sse = (y_true.col(j) - y_pred.col(j)).squaredNorm();
    score.per_dim(j) = 1.0 - sse / sst;
    sum += score.per_dim(j);
    sse_total += sse;
    sst_total += sst;
    ++used;
  }
  if (score.excluded > 0) {
    spdlog::warn("r2_score: {} constant target column(s) excluded", score.excluded);
  }
  score.mean = used > 0 ? sum / used : std::numeric_limits<double>::quiet_NaN();
  score.variance_weighted = used > 0 ? 1.0 - sse_total / sst_total : std::numeric_limits<double>::quiet_NaN();
  return score;
}

}  // namespace switchboard::num
