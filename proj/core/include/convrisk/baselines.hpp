#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "convrisk/dataset.hpp"

namespace convrisk::baselines {

// Rows are samples, columns features. Values are expected to be 0/1 but any
// real value works; trees split on midpoints between observed values.
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class BaselineKind { LogisticRegression, RandomForest, GradientBoostedTrees };

// "logistic_regression", "random_forest", "gbt".
std::string_view to_string(BaselineKind kind);
// Row label used in reports.
std::string_view display_name(BaselineKind kind);
// Accepts the to_string() names plus "lr", "rf", "xgboost". Throws ArgumentError.
BaselineKind parse_baseline_kind(std::string_view name);

struct BaselineHyper {
  // Logistic regression: full-batch gradient descent on mean log loss + l2/2 |w|^2.
  double lr_step = 0.5;
  std::size_t lr_iterations = 500;
  double lr_l2 = 1e-4;

  // Random forest.
  std::size_t rf_trees = 100;
  bool rf_bootstrap = true;
  // Features tried per split; 0 means floor(sqrt(d)).
  std::size_t rf_max_features = 0;
  // 0 means unlimited.
  std::size_t rf_max_depth = 0;
  std::size_t rf_min_samples_leaf = 1;

  // Gradient-boosted trees (logistic loss, second-order leaf values).
  std::size_t gbt_rounds = 50;
  std::size_t gbt_max_depth = 3;
  double gbt_learning_rate = 0.1;
  std::size_t gbt_min_samples_leaf = 4;
  std::size_t gbt_min_samples_split = 10;
  double gbt_lambda = 1.0;
};

// Binary decision tree stored as a flat node array; node 0 is the root.
// A sample goes left when x[feature] <= threshold.
struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  std::size_t left = 0;
  std::size_t right = 0;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const;
  std::size_t leaf_count() const;
};

struct CartOptions {
  std::size_t max_depth = 0;  // 0 = unlimited
  std::size_t min_samples_leaf = 1;
  std::size_t max_features = 0;  // 0 = all features
};

// Gini CART on the rows listed in `rows`; leaves hold the positive fraction.
// Ties between candidate splits go to the lowest feature index, then the
// lowest threshold.
Tree fit_cart(const FeatureMatrix& X, std::span<const std::uint8_t> y, std::span<const std::size_t> rows,
              const CartOptions& options, std::uint64_t seed);

class BaselineModel {
 public:
  BaselineKind kind() const noexcept { return kind_; }
  std::size_t d() const noexcept { return d_; }
  // True when the fit collapsed to a single probability for every input.
  bool is_constant() const noexcept { return constant_; }

  // p(y = 1) per row, each in [0, 1]. Throws ArgumentError on a width mismatch.
  std::vector<double> predict_proba(const FeatureMatrix& X) const;
  double predict_one(std::span<const double> x) const;

  // Fitted parameters, exposed for inspection and tests.
  const Eigen::VectorXd& weights() const noexcept { return weights_; }
  double bias() const noexcept { return bias_; }
  const std::vector<Tree>& trees() const noexcept { return trees_; }

 private:
  friend BaselineModel fit(BaselineKind, const FeatureMatrix&, std::span<const std::uint8_t>, const BaselineHyper&,
                           std::uint64_t, std::vector<double>*);

  BaselineKind kind_ = BaselineKind::LogisticRegression;
  std::size_t d_ = 0;
  bool constant_ = false;
  double constant_value_ = 0.5;
  Eigen::VectorXd weights_;
  double bias_ = 0.0;
  std::vector<Tree> trees_;
  double learning_rate_ = 0.0;
};

// Deterministic in (X, y, hyper, seed). Single-class (or empty) targets give
// a constant model at the class prior clipped to [0.01, 0.99]. Throws
// ArgumentError on shape mismatches or labels other than 0/1. For logistic
// regression, `loss_trace` (when given) receives the objective before every
// step and after the last.
BaselineModel fit(BaselineKind kind, const FeatureMatrix& X, std::span<const std::uint8_t> y,
                  const BaselineHyper& hyper, std::uint64_t seed, std::vector<double>* loss_trace = nullptr);

// Regularised mean log loss minimised by the logistic-regression fit.
double logistic_objective(const Eigen::VectorXd& w, double b, const FeatureMatrix& X, std::span<const std::uint8_t> y,
                          double l2);

FeatureMatrix feature_matrix(std::span<const PatientRecord> records, std::span<const std::size_t> rows);
FeatureMatrix feature_matrix(std::span<const PatientRecord> records);

}  // namespace convrisk::baselines
