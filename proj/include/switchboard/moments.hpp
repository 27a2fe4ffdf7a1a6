#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>

namespace switchboard::store {

// Running raw moments of paired vectors (x in R^d, y in R^d').  Everything is
// accumulated in double so chunk order only perturbs the last few ulps.
class MomentAccumulator {
 public:
  MomentAccumulator() = default;
  MomentAccumulator(Eigen::Index d_in, Eigen::Index d_out);

  void add(std::span<const float> x, std::span<const float> y);
  // Rows of `x` and `y` are tokens.
  void add_rows(const Eigen::Ref<const Eigen::MatrixXf>& x,
                const Eigen::Ref<const Eigen::MatrixXf>& y);
  void add_rows(const Eigen::Ref<const Eigen::MatrixXd>& x,
                const Eigen::Ref<const Eigen::MatrixXd>& y);
  void merge(const MomentAccumulator& other);

  Eigen::Index d_in() const { return sum_x.size(); }
  Eigen::Index d_out() const { return sum_y.size(); }

  Eigen::VectorXd mean_x() const;
  Eigen::VectorXd mean_y() const;
  // Centered second moments divided by n.
  Eigen::MatrixXd covariance_xx() const;
  Eigen::MatrixXd covariance_xy() const;

  std::int64_t n = 0;
  Eigen::VectorXd sum_x;
  Eigen::VectorXd sum_y;
  Eigen::MatrixXd xtx;  // upper and lower triangle both kept in sync
  Eigen::MatrixXd xty;
};

}  // namespace switchboard::store
