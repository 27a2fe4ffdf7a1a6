#include "switchboard/numerics/classify.hpp"

#include "switchboard/error.hpp"
#include "switchboard/numerics/stats.hpp"

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace switchboard::num {
namespace {

int majority(const std::vector<std::int64_t>& counts) {
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

struct TreeBuilder {
  const Eigen::Ref<const BinaryMatrix>& x;
  const std::vector<int>& y;
  int n_classes;
  int max_depth;
  std::vector<DecisionTree::Node>& nodes;

  int grow(const std::vector<Eigen::Index>& rows, int depth) {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(n_classes), 0);
    for (auto r : rows) ++counts[static_cast<std::size_t>(y[static_cast<std::size_t>(r)])];
    const int id = static_cast<int>(nodes.size());
    nodes.push_back({});
    nodes[id].label = majority(counts);
    nodes[id].count = static_cast<std::int64_t>(rows.size());
    nodes[id].gini = gini_impurity(counts);
    if (depth >= max_depth || nodes[id].gini <= 0.0) return id;

    int best_feature = -1;
    double best_score = std::numeric_limits<double>::infinity();
    std::vector<std::int64_t> on(static_cast<std::size_t>(n_classes));
    std::vector<std::int64_t> off(static_cast<std::size_t>(n_classes));
    for (Eigen::Index f = 0; f < x.cols(); ++f) {
      std::fill(on.begin(), on.end(), 0);
      for (auto r : rows) {
        if (x(r, f)) ++on[static_cast<std::size_t>(y[static_cast<std::size_t>(r)])];
      }
      std::int64_t n_on = 0;
      for (int c = 0; c < n_classes; ++c) {
        off[static_cast<std::size_t>(c)] = counts[static_cast<std::size_t>(c)] - on[static_cast<std::size_t>(c)];
        n_on += on[static_cast<std::size_t>(c)];
      }
      const auto n_all = static_cast<std::int64_t>(rows.size());
      if (n_on == 0 || n_on == n_all) continue;
      const double score = (static_cast<double>(n_on) * gini_impurity(on) +
                            static_cast<double>(n_all - n_on) * gini_impurity(off)) /
                           static_cast<double>(n_all);
      if (score < best_score - 1e-12) {
        best_score = score;
        best_feature = static_cast<int>(f);
      }
    }
    if (best_feature < 0) return id;

    std::vector<Eigen::Index> left;
    std::vector<Eigen::Index> right;
    for (auto r : rows) (x(r, best_feature) ? right : left).push_back(r);
    const int l = grow(left, depth + 1);
    const int rr = grow(right, depth + 1);
    nodes[id].feature = best_feature;
    nodes[id].left = l;
    nodes[id].right = rr;
    return id;
  }
};

}  // namespace

double gini_impurity(const std::vector<std::int64_t>& class_counts) {
  std::int64_t total = 0;
  for (auto c : class_counts) total += c;
  if (total == 0) return 0.0;
  double sum_sq = 0.0;
  for (auto c : class_counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    sum_sq += p * p;
  }
  return 1.0 - sum_sq;
}

int DecisionTree::predict(const Eigen::Ref<const BinaryMatrix>& features, Eigen::Index row) const {
  int node = 0;
  while (nodes_[static_cast<std::size_t>(node)].feature >= 0) {
    const auto& n = nodes_[static_cast<std::size_t>(node)];
    node = features(row, n.feature) ? n.right : n.left;
  }
  return nodes_[static_cast<std::size_t>(node)].label;
}

std::vector<int> DecisionTree::predict(const Eigen::Ref<const BinaryMatrix>& features) const {
  std::vector<int> out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index r = 0; r < features.rows(); ++r) out[static_cast<std::size_t>(r)] = predict(features, r);
  return out;
}

int DecisionTree::depth() const {
  std::vector<int> d(nodes_.size(), 0);
  int deepest = 0;
  // Children are always appended after their parent.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].feature >= 0) {
      d[static_cast<std::size_t>(nodes_[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes_[i].right)] = d[i] + 1;
      deepest = std::max(deepest, d[i] + 1);
    }
  }
  return deepest;
}

DecisionTree cart_fit(const Eigen::Ref<const BinaryMatrix>& features, const std::vector<int>& labels,
                      int max_depth) {
  if (features.rows() != static_cast<Eigen::Index>(labels.size()) || labels.empty()) {
    throw InvalidArgument("cart_fit: need one label per feature row");
  }
  if (max_depth < 1) throw InvalidArgument("cart_fit: max_depth must be >= 1");
  if (*std::min_element(labels.begin(), labels.end()) < 0) {
    throw InvalidArgument("cart_fit: class labels must be non-negative");
  }
  for (Eigen::Index i = 0; i < features.size(); ++i) {
    if (features.data()[i] > 1) throw InvalidArgument("cart_fit: features must be binary");
  }
  DecisionTree tree;
  const int n_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  TreeBuilder builder{features, labels, n_classes, max_depth, tree.nodes_};
  std::vector<Eigen::Index> rows(labels.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<Eigen::Index>(i);
  builder.grow(rows, 0);
  return tree;
}

double cart_accuracy(const DecisionTree& tree, const Eigen::Ref<const BinaryMatrix>& features,
                     const std::vector<int>& labels) {
  if (labels.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::int64_t hit = 0;
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    hit += tree.predict(features, r) == labels[static_cast<std::size_t>(r)];
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double majority_baseline(const std::vector<int>& train_labels, const std::vector<int>& labels) {
  if (train_labels.empty() || labels.empty()) return std::numeric_limits<double>::quiet_NaN();
  const int n_classes = *std::max_element(train_labels.begin(), train_labels.end()) + 1;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n_classes), 0);
  for (int l : train_labels) ++counts[static_cast<std::size_t>(l)];
  const int m = majority(counts);
  return static_cast<double>(std::count(labels.begin(), labels.end(), m)) /
         static_cast<double>(labels.size());
}

namespace {

double log1p_exp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Eigen::VectorXd LogisticModel::probability(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
  Eigen::VectorXd z = x * weights;
  z.array() += bias;
  return z.unaryExpr([](double v) { return sigmoid(v); });
}

double LogisticModel::accuracy(const Eigen::Ref<const Eigen::MatrixXd>& x,
                               const std::vector<int>& labels) const {
  const Eigen::VectorXd p = probability(x);
  std::int64_t hit = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) hit += (p(i) >= 0.5 ? 1 : 0) == labels[static_cast<std::size_t>(i)];
  return labels.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(labels.size());
}

double logistic_loss(const Eigen::Ref<const Eigen::MatrixXd>& x, const std::vector<int>& labels,
                     const Eigen::Ref<const Eigen::VectorXd>& weights, double bias, double l2) {
  const Eigen::VectorXd z = (x * weights).array() + bias;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    // -log p(y|z) = log(1 + e^z) - y z
    sum += log1p_exp(z(i)) - (labels[static_cast<std::size_t>(i)] ? z(i) : 0.0);
  }
  return sum / static_cast<double>(z.size()) + 0.5 * l2 * weights.squaredNorm();
}

LogisticModel logistic_fit(const Eigen::Ref<const Eigen::MatrixXd>& x, const std::vector<int>& labels,
                           const LogisticOptions& options) {
  if (x.rows() != static_cast<Eigen::Index>(labels.size()) || labels.empty()) {
    throw InvalidArgument("logistic_fit: need one label per row");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw InvalidArgument("logistic_fit: labels must be 0 or 1");
  }
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Eigen::VectorXd yv(n);
  for (Eigen::Index i = 0; i < n; ++i) yv(i) = labels[static_cast<std::size_t>(i)];

  LogisticModel m;
  m.weights = Eigen::VectorXd::Zero(d);
  m.bias = 0.0;
  auto gradient = [&](const Eigen::VectorXd& w, double b, Eigen::VectorXd& gw, double& gb) {
    Eigen::VectorXd z = x * w;
    z.array() += b;
    const Eigen::VectorXd r = z.unaryExpr([](double v) { return sigmoid(v); }) - yv;
    gw = x.transpose() * r / static_cast<double>(n) + options.l2 * w;
    gb = r.mean();
  };
  double loss = logistic_loss(x, labels, m.weights, m.bias, options.l2);
  Eigen::VectorXd gw;
  double gb = 0.0;
  double step = 1.0;
  int iter = 0;
  for (; iter < options.max_iter; ++iter) {
    gradient(m.weights, m.bias, gw, gb);
    const double g2 = gw.squaredNorm() + gb * gb;
    m.grad_norm = std::sqrt(g2);
    if (m.grad_norm < options.grad_tol) {
      m.converged = true;
      break;
    }
    step = std::min(step * 2.0, 1e6);
    for (;;) {
      const Eigen::VectorXd w_new = m.weights - step * gw;
      const double b_new = m.bias - step * gb;
      const double l_new = logistic_loss(x, labels, w_new, b_new, options.l2);
      if (l_new <= loss - 0.5 * step * g2) {
        m.weights = w_new;
        m.bias = b_new;
        loss = l_new;
        break;
      }
      step *= 0.5;
      if (step < 1e-16) break;
    }
    if (step < 1e-16) break;
  }
  m.loss = loss;
  m.iterations = iter;
  if (!m.converged) {
    spdlog::warn("logistic_fit: gradient norm {:.3g} above tolerance after {} iterations", m.grad_norm, iter);
  }
  return m;
}

LogisticEvaluation logistic_holdout(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                    const std::vector<int>& labels, std::uint64_t seed,
                                    const LogisticOptions& options) {
  const Split split = train_validation_split(labels.size(), 0.7, seed);
  auto gather = [&](const std::vector<std::size_t>& idx, Eigen::MatrixXd& xs, std::vector<int>& ys) {
    xs.resize(static_cast<Eigen::Index>(idx.size()), x.cols());
    ys.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      xs.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
      ys[i] = labels[idx[i]];
    }
  };
  Eigen::MatrixXd xt;
  Eigen::MatrixXd xv;
  std::vector<int> yt;
  std::vector<int> yvl;
  gather(split.train, xt, yt);
  gather(split.validation, xv, yvl);
  LogisticEvaluation out;
  out.model = logistic_fit(xt, yt, options);
  out.train_accuracy = out.model.accuracy(xt, yt);
  out.heldout_accuracy = out.model.accuracy(xv, yvl);
  const auto ones = std::count(yvl.begin(), yvl.end(), 1);
  out.heldout_base_rate =
      static_cast<double>(std::max<std::int64_t>(ones, static_cast<std::int64_t>(yvl.size()) - ones)) /
      static_cast<double>(yvl.size());
  return out;
}

}  // namespace switchboard::num
