#include "switchboard/moments.hpp"

#include "switchboard/error.hpp"

#include <fmt/core.h>

namespace switchboard::store {

MomentAccumulator::MomentAccumulator(Eigen::Index d_in, Eigen::Index d_out)
    : sum_x(Eigen::VectorXd::Zero(d_in)),
      sum_y(Eigen::VectorXd::Zero(d_out)),
      xtx(Eigen::MatrixXd::Zero(d_in, d_in)),
      xty(Eigen::MatrixXd::Zero(d_in, d_out)) {}

void MomentAccumulator::add(std::span<const float> x, std::span<const float> y) {
  if (static_cast<Eigen::Index>(x.size()) != d_in() ||
      static_cast<Eigen::Index>(y.size()) != d_out()) {
    throw InvalidArgument(fmt::format("moment dims ({}, {}) do not match input ({}, {})",
                                      d_in(), d_out(), x.size(), y.size()));
  }
  Eigen::Map<const Eigen::VectorXf> xf(x.data(), d_in());
  Eigen::Map<const Eigen::VectorXf> yf(y.data(), d_out());
  const Eigen::VectorXd xd = xf.cast<double>();
  const Eigen::VectorXd yd = yf.cast<double>();
  ++n;
  sum_x += xd;
  sum_y += yd;
  xtx.selfadjointView<Eigen::Lower>().rankUpdate(xd);
  xtx.triangularView<Eigen::StrictlyUpper>() = xtx.transpose();
  xty.noalias() += xd * yd.transpose();
}

void MomentAccumulator::add_rows(const Eigen::Ref<const Eigen::MatrixXf>& x,
                                 const Eigen::Ref<const Eigen::MatrixXf>& y) {
  add_rows(Eigen::MatrixXd(x.cast<double>()), Eigen::MatrixXd(y.cast<double>()));
}

void MomentAccumulator::add_rows(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                 const Eigen::Ref<const Eigen::MatrixXd>& y) {
  if (x.cols() != d_in() || y.cols() != d_out() || x.rows() != y.rows()) {
    throw InvalidArgument(fmt::format("moment dims ({}, {}) do not match block {}x{} / {}x{}",
                                      d_in(), d_out(), x.rows(), x.cols(), y.rows(), y.cols()));
  }
  n += x.rows();
  sum_x += x.colwise().sum().transpose();
  sum_y += y.colwise().sum().transpose();
  xtx.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
  xtx.triangularView<Eigen::StrictlyUpper>() = xtx.transpose();
  xty.noalias() += x.transpose() * y;
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
  if (other.d_in() != d_in() || other.d_out() != d_out()) {
    throw InvalidArgument("cannot merge moment accumulators of different shape");
  }
  n += other.n;
  sum_x += other.sum_x;
  sum_y += other.sum_y;
  xtx += other.xtx;
  xty += other.xty;
}

Eigen::VectorXd MomentAccumulator::mean_x() const { return sum_x / static_cast<double>(n); }
Eigen::VectorXd MomentAccumulator::mean_y() const { return sum_y / static_cast<double>(n); }

Eigen::MatrixXd MomentAccumulator::covariance_xx() const {
  const double nn = static_cast<double>(n);
  const Eigen::VectorXd mx = mean_x();
  Eigen::MatrixXd c = xtx / nn - mx * mx.transpose();
  return 0.5 * (c + c.transpose());
}

Eigen::MatrixXd MomentAccumulator::covariance_xy() const {
  const double nn = static_cast<double>(n);
  return xty / nn - mean_x() * mean_y().transpose();
}

}  // namespace switchboard::store
