#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace switchboard::num {

inline constexpr std::int64_t kDefaultFeatureBudget = 50'000;

// C(k + degree, degree), saturating at INT64_MAX.
std::int64_t monomial_count(int k, int degree);

// Largest k' <= k_requested whose degree-`degree` monomial count fits `budget`.
int max_k_for_budget(int degree, int k_requested, std::int64_t budget = kDefaultFeatureBudget);

// All monomials of total degree <= d in k variables, graded lexicographic:
// 1, z0..z(k-1), z0^2, z0 z1, ..., z(k-1)^2, z0^3, ...
class PolyFeatureMap {
 public:
  PolyFeatureMap(int k, int degree, std::int64_t budget = kDefaultFeatureBudget);

  int k() const { return k_; }
  int degree() const { return degree_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(parent_.size()); }

  void expand(std::span<const double> z, std::span<double> out) const;
  Eigen::VectorXd expand(const Eigen::Ref<const Eigen::VectorXd>& z) const;
  // Columns [first, first + count) of the expansion of every row of z.
  void expand_columns(const Eigen::Ref<const Eigen::MatrixXd>& z, Eigen::Index first,
                      Eigen::Index count, Eigen::Ref<Eigen::MatrixXf> out) const;
  Eigen::MatrixXd expand_rows(const Eigen::Ref<const Eigen::MatrixXd>& z) const;

  // Exponent vector of monomial i.
  std::vector<int> exponents(Eigen::Index i) const;

 private:
  int k_;
  int degree_;
  std::vector<std::int32_t> parent_;  // monomial i = monomial parent_[i] * z[var_[i]]
  std::vector<std::int32_t> var_;
};

// Ridge regression with an unpenalized intercept:
// minimizes ||F Theta + 1 c^T - Y||^2 + alpha ||Theta||^2.
struct RidgeModel {
  Eigen::MatrixXd coefficients;  // F x d_out
  Eigen::VectorXd intercept;
  double alpha = 1.0;

  Eigen::MatrixXd predict(const Eigen::Ref<const Eigen::MatrixXd>& features) const;
};

RidgeModel ridge_fit(const Eigen::Ref<const Eigen::MatrixXd>& features,
                     const Eigen::Ref<const Eigen::MatrixXd>& targets, double alpha);

// Polynomial ridge that never materializes the design matrix when the
// monomial count exceeds the training rows: it switches to the dual
// (Gram-matrix) form and streams feature columns in blocks.
struct PolyRidgePredictions {
  Eigen::MatrixXd train;
  Eigen::MatrixXd eval;
  Eigen::Index n_features = 0;
  bool dual = false;
};

PolyRidgePredictions poly_ridge(const Eigen::Ref<const Eigen::MatrixXd>& z_train,
                                const Eigen::Ref<const Eigen::MatrixXd>& y_train,
                                const Eigen::Ref<const Eigen::MatrixXd>& z_eval, int degree,
                                double alpha, std::int64_t budget = kDefaultFeatureBudget);

}  // namespace switchboard::num
