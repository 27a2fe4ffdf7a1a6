#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace switchboard::num {

using BinaryMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Greedy Gini CART over binary features.  Left child = feature off.
class DecisionTree {
 public:
  struct Node {
    int feature = -1;  // -1 for a leaf
    int left = -1;
    int right = -1;
    int label = 0;  // majority class at this node
    std::int64_t count = 0;
    double gini = 0.0;
  };

  int predict(const Eigen::Ref<const BinaryMatrix>& features, Eigen::Index row) const;
  std::vector<int> predict(const Eigen::Ref<const BinaryMatrix>& features) const;

  int depth() const;
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  friend DecisionTree cart_fit(const Eigen::Ref<const BinaryMatrix>&, const std::vector<int>&, int);
  std::vector<Node> nodes_;
};

double gini_impurity(const std::vector<std::int64_t>& class_counts);

// Ties between equally good splits go to the lower feature index; majority
// ties go to the lower class id.  A node is split whenever it is impure and
// some feature separates it, even at zero impurity gain (so XOR is learnable).
DecisionTree cart_fit(const Eigen::Ref<const BinaryMatrix>& features, const std::vector<int>& labels,
                      int max_depth);

double cart_accuracy(const DecisionTree& tree, const Eigen::Ref<const BinaryMatrix>& features,
                     const std::vector<int>& labels);

// Fraction of `labels` equal to the most frequent class of `train_labels`.
double majority_baseline(const std::vector<int>& train_labels, const std::vector<int>& labels);

struct LogisticOptions {
  double l2 = 1e-4;  // penalty on weights, not on the bias
  double grad_tol = 1e-5;
  int max_iter = 20'000;
};

struct LogisticModel {
  Eigen::VectorXd weights;
  double bias = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;

  Eigen::VectorXd probability(const Eigen::Ref<const Eigen::MatrixXd>& x) const;
  double accuracy(const Eigen::Ref<const Eigen::MatrixXd>& x, const std::vector<int>& labels) const;
};

// Full-batch gradient descent with Armijo backtracking on the mean log loss
// plus (l2 / 2) ||w||^2.  Returns the best iterate with converged = false if
// the gradient tolerance is not met within max_iter.
LogisticModel logistic_fit(const Eigen::Ref<const Eigen::MatrixXd>& x, const std::vector<int>& labels,
                           const LogisticOptions& options = {});

double logistic_loss(const Eigen::Ref<const Eigen::MatrixXd>& x, const std::vector<int>& labels,
                     const Eigen::Ref<const Eigen::VectorXd>& weights, double bias, double l2);

struct LogisticEvaluation {
  LogisticModel model;
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
  double heldout_base_rate = 0.0;  // majority-class rate on the held-out rows
};

// Seeded 70/30 split, then logistic_fit on the 70% and accuracy on the 30%.
LogisticEvaluation logistic_holdout(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                    const std::vector<int>& labels, std::uint64_t seed,
                                    const LogisticOptions& options = {});

}  // namespace switchboard::num
