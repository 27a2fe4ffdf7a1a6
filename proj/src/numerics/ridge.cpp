#include "switchboard/numerics/ridge.hpp"

#include "switchboard/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <limits>

namespace switchboard::num {

std::int64_t monomial_count(int k, int degree) {
  if (k < 0 || degree < 0) throw InvalidArgument("monomial_count: negative argument");
  // C(k + d, d) computed incrementally; each partial product is itself a
  // binomial coefficient so the division is exact.
  std::int64_t c = 1;
  for (int i = 1; i <= degree; ++i) {
    const std::int64_t num = static_cast<std::int64_t>(k) + i;
    if (c > std::numeric_limits<std::int64_t>::max() / num) {
      return std::numeric_limits<std::int64_t>::max();
    }
    c = c * num / i;
  }
  return c;
}

int max_k_for_budget(int degree, int k_requested, std::int64_t budget) {
  int k = k_requested;
  while (k > 0 && monomial_count(k, degree) > budget) --k;
  return k;
}

PolyFeatureMap::PolyFeatureMap(int k, int degree, std::int64_t budget) : k_(k), degree_(degree) {
  if (k < 1 || degree < 0) {
    throw InvalidArgument(fmt::format("poly features need k >= 1 and degree >= 0 (got {}, {})", k, degree));
  }
  const std::int64_t count = monomial_count(k, degree);
  if (count > budget) {
    throw InvalidArgument(fmt::format(
        "degree-{} features over k={} dims give {} monomials, above the budget of {}; "
        "reduce k to {} or less",
        degree, k, count, budget, max_k_for_budget(degree, k, budget)));
  }
  parent_.reserve(static_cast<std::size_t>(count));
  var_.reserve(static_cast<std::size_t>(count));
  std::vector<std::int32_t> last;  // highest variable index in each monomial
  last.reserve(static_cast<std::size_t>(count));
  parent_.push_back(-1);
  var_.push_back(-1);
  last.push_back(0);
  std::size_t prev_begin = 0;
  std::size_t prev_end = 1;
  for (int t = 1; t <= degree; ++t) {
    for (std::size_t m = prev_begin; m < prev_end; ++m) {
      for (int j = last[m]; j < k; ++j) {
        parent_.push_back(static_cast<std::int32_t>(m));
        var_.push_back(j);
        last.push_back(j);
      }
    }
    prev_begin = prev_end;
    prev_end = parent_.size();
  }
}

void PolyFeatureMap::expand(std::span<const double> z, std::span<double> out) const {
  if (static_cast<int>(z.size()) != k_ || static_cast<Eigen::Index>(out.size()) != size()) {
    throw InvalidArgument("PolyFeatureMap::expand: size mismatch");
  }
  out[0] = 1.0;
  const std::size_t n = parent_.size();
  for (std::size_t i = 1; i < n; ++i) out[i] = out[parent_[i]] * z[var_[i]];
}

Eigen::VectorXd PolyFeatureMap::expand(const Eigen::Ref<const Eigen::VectorXd>& z) const {
  const Eigen::VectorXd zz = z;
  Eigen::VectorXd out(size());
  expand(std::span<const double>(zz.data(), zz.size()), std::span<double>(out.data(), out.size()));
  return out;
}

void PolyFeatureMap::expand_columns(const Eigen::Ref<const Eigen::MatrixXd>& z, Eigen::Index first,
                                    Eigen::Index count, Eigen::Ref<Eigen::MatrixXf> out) const {
  if (z.cols() != k_ || first < 0 || first + count > size() || out.rows() != z.rows() ||
      out.cols() != count) {
    throw InvalidArgument("PolyFeatureMap::expand_columns: bad block");
  }
  std::vector<double> row(static_cast<std::size_t>(size()));
  Eigen::VectorXd zr(k_);
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    zr = z.row(r).transpose();
    const Eigen::Index needed = first + count;
    row[0] = 1.0;
    for (Eigen::Index i = 1; i < needed; ++i) row[i] = row[parent_[i]] * zr[var_[i]];
    for (Eigen::Index c = 0; c < count; ++c) out(r, c) = static_cast<float>(row[first + c]);
  }
}

Eigen::MatrixXd PolyFeatureMap::expand_rows(const Eigen::Ref<const Eigen::MatrixXd>& z) const {
  Eigen::MatrixXd out(z.rows(), size());
  for (Eigen::Index r = 0; r < z.rows(); ++r) out.row(r) = expand(z.row(r).transpose()).transpose();
  return out;
}

std::vector<int> PolyFeatureMap::exponents(Eigen::Index i) const {
  std::vector<int> e(static_cast<std::size_t>(k_), 0);
  for (auto m = static_cast<std::int32_t>(i); m > 0; m = parent_[m]) ++e[var_[m]];
  return e;
}

Eigen::MatrixXd RidgeModel::predict(const Eigen::Ref<const Eigen::MatrixXd>& features) const {
  Eigen::MatrixXd out = features * coefficients;
  out.rowwise() += intercept.transpose();
  return out;
}

RidgeModel ridge_fit(const Eigen::Ref<const Eigen::MatrixXd>& features,
                     const Eigen::Ref<const Eigen::MatrixXd>& targets, double alpha) {
  if (alpha < 0.0) throw InvalidArgument("ridge_fit: alpha must be non-negative");
  if (features.rows() != targets.rows() || features.rows() < 1) {
    throw InvalidArgument("ridge_fit: features and targets need the same non-zero row count");
  }
  const Eigen::RowVectorXd fmean = features.colwise().mean();
  const Eigen::RowVectorXd ymean = targets.colwise().mean();
  const Eigen::MatrixXd fc = features.rowwise() - fmean;
  const Eigen::MatrixXd yc = targets.rowwise() - ymean;
  RidgeModel model;
  model.alpha = alpha;
  if (features.cols() <= features.rows()) {
    Eigen::MatrixXd gram = fc.transpose() * fc;
    gram.diagonal().array() += alpha;
    model.coefficients = gram.ldlt().solve(fc.transpose() * yc);
  } else {
    Eigen::MatrixXd gram = fc * fc.transpose();
    gram.diagonal().array() += alpha;
    model.coefficients = fc.transpose() * gram.ldlt().solve(yc);
  }
  model.intercept = (ymean - fmean * model.coefficients).transpose();
  return model;
}

PolyRidgePredictions poly_ridge(const Eigen::Ref<const Eigen::MatrixXd>& z_train,
                                const Eigen::Ref<const Eigen::MatrixXd>& y_train,
                                const Eigen::Ref<const Eigen::MatrixXd>& z_eval, int degree,
                                double alpha, std::int64_t budget) {
  if (z_train.rows() != y_train.rows() || z_train.rows() < 2) {
    throw InvalidArgument("poly_ridge: need >= 2 training rows matching the targets");
  }
  if (z_eval.rows() > 0 && z_eval.cols() != z_train.cols()) {
    throw InvalidArgument("poly_ridge: eval inputs have the wrong width");
  }
  const PolyFeatureMap map(static_cast<int>(z_train.cols()), degree, budget);
  const Eigen::Index n = z_train.rows();
  const Eigen::Index m = z_eval.rows();
  const Eigen::Index p = map.size();

  PolyRidgePredictions out;
  out.n_features = p;
  if (p <= n) {
    const RidgeModel model = ridge_fit(map.expand_rows(z_train), y_train, alpha);
    out.train = model.predict(map.expand_rows(z_train));
    out.eval = m > 0 ? model.predict(map.expand_rows(z_eval)) : Eigen::MatrixXd(0, y_train.cols());
    return out;
  }

  out.dual = true;
  const Eigen::RowVectorXd ymean = y_train.colwise().mean();
  const Eigen::MatrixXd yc = y_train.rowwise() - ymean;
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(m, n);
  constexpr Eigen::Index kBlock = 1024;
  Eigen::MatrixXf ft(n, kBlock);
  Eigen::MatrixXf fe(m, kBlock);
  for (Eigen::Index first = 0; first < p; first += kBlock) {
    const Eigen::Index count = std::min(kBlock, p - first);
    auto ftb = ft.leftCols(count);
    auto feb = fe.leftCols(count);
    map.expand_columns(z_train, first, count, ftb);
    if (m > 0) map.expand_columns(z_eval, first, count, feb);
    const Eigen::RowVectorXf mu = ftb.colwise().mean();
    ftb.rowwise() -= mu;
    if (m > 0) feb.rowwise() -= mu;
    Eigen::MatrixXf g = Eigen::MatrixXf::Zero(n, n);
    g.selfadjointView<Eigen::Lower>().rankUpdate(ftb);
    gram += g.cast<double>().selfadjointView<Eigen::Lower>().toDenseMatrix();
    if (m > 0) cross += (feb * ftb.transpose()).cast<double>();
  }
  Eigen::MatrixXd reg = gram;
  reg.diagonal().array() += alpha;
  const Eigen::MatrixXd dual_coef = reg.ldlt().solve(yc);
  out.train = gram * dual_coef;
  out.train.rowwise() += ymean;
  out.eval = cross * dual_coef;
  out.eval.rowwise() += ymean;
  return out;
}

}  // namespace switchboard::num
