#include "convrisk/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "convrisk/error.hpp"
#include "convrisk/rng.hpp"

namespace convrisk::baselines {

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

std::span<const double> row_of(const FeatureMatrix& X, Eigen::Index i) {
  return {X.data() + i * X.cols(), static_cast<std::size_t>(X.cols())};
}

// Rows sorted by their value of `feature`; split thresholds are the
// midpoints between consecutive distinct values.
void sort_rows(const FeatureMatrix& X, std::span<const std::size_t> rows, int feature, std::vector<std::size_t>& order) {
  order.assign(rows.begin(), rows.end());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return X(static_cast<Eigen::Index>(a), feature) < X(static_cast<Eigen::Index>(b), feature);
  });
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double score = 0.0;  // lower is better for Gini, higher for gain
};

// Candidate features for one split, in ascending index order.
std::vector<int> candidate_features(std::size_t d, std::size_t max_features, Rng& rng) {
  std::vector<int> all(d);
  std::iota(all.begin(), all.end(), 0);
  if (max_features == 0 || max_features >= d) return all;
  // Partial Fisher-Yates: the first max_features slots are the draw.
  for (std::size_t i = 0; i < max_features; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(d - i));
    std::swap(all[i], all[j]);
  }
  all.resize(max_features);
  std::sort(all.begin(), all.end());
  return all;
}

class CartBuilder {
 public:
  CartBuilder(const FeatureMatrix& X, std::span<const std::uint8_t> y, const CartOptions& opt, std::uint64_t seed)
      : X_(X), y_(y), opt_(opt), rng_(seed) {}

  Tree build(std::vector<std::size_t> rows) {
    grow(std::move(rows), 0);
    return std::move(tree_);
  }

 private:
  std::size_t grow(std::vector<std::size_t> rows, std::size_t depth) {
    const std::size_t id = tree_.nodes.size();
    tree_.nodes.emplace_back();
    const double n = static_cast<double>(rows.size());
    double pos = 0;
    for (auto r : rows) pos += y_[r];
    tree_.nodes[id].value = rows.empty() ? 0.5 : pos / n;
    if (pos == 0 || pos == n) return id;
    if (opt_.max_depth != 0 && depth >= opt_.max_depth) return id;
    if (rows.size() < 2 * std::max<std::size_t>(opt_.min_samples_leaf, 1)) return id;

    const double parent = gini(pos, n);
    Split best;
    best.score = parent - 1e-12;
    std::vector<std::size_t> order;
    for (int f : candidate_features(static_cast<std::size_t>(X_.cols()), opt_.max_features, rng_)) {
      sort_rows(X_, rows, f, order);
      double left_pos = 0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        left_pos += y_[order[i]];
        const double a = X_(static_cast<Eigen::Index>(order[i]), f);
        const double b = X_(static_cast<Eigen::Index>(order[i + 1]), f);
        if (a == b) continue;
        const double nl = static_cast<double>(i + 1), nr = n - nl;
        if (i + 1 < opt_.min_samples_leaf || order.size() - i - 1 < opt_.min_samples_leaf) continue;
        const double impurity = (nl * gini(left_pos, nl) + nr * gini(pos - left_pos, nr)) / n;
        if (impurity < best.score) best = {f, 0.5 * (a + b), impurity};
      }
    }
    if (best.feature < 0) return id;

    std::vector<std::size_t> left, right;
    for (auto r : rows) (X_(static_cast<Eigen::Index>(r), best.feature) <= best.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const auto l = grow(std::move(left), depth + 1);
    const auto r = grow(std::move(right), depth + 1);
    auto& node = tree_.nodes[id];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  static double gini(double pos, double n) {
    if (n == 0) return 0.0;
    const double p = pos / n;
    return 2.0 * p * (1.0 - p);
  }

  const FeatureMatrix& X_;
  std::span<const std::uint8_t> y_;
  CartOptions opt_;
  Rng rng_;
  Tree tree_;
};

// Regression tree on logistic-loss gradients with second-order leaf values.
class BoostBuilder {
 public:
  BoostBuilder(const FeatureMatrix& X, const std::vector<double>& g, const std::vector<double>& h,
               const BaselineHyper& hyper)
      : X_(X), g_(g), h_(h), hyper_(hyper) {}

  Tree build(std::vector<std::size_t> rows) {
    grow(std::move(rows), 0);
    return std::move(tree_);
  }

 private:
  double term(double G, double H) const { return G * G / (H + hyper_.gbt_lambda); }

  std::size_t grow(std::vector<std::size_t> rows, std::size_t depth) {
    const std::size_t id = tree_.nodes.size();
    tree_.nodes.emplace_back();
    double G = 0, H = 0;
    for (auto r : rows) {
      G += g_[r];
      H += h_[r];
    }
    tree_.nodes[id].value = -G / (H + hyper_.gbt_lambda);
    if (depth >= hyper_.gbt_max_depth || rows.size() < hyper_.gbt_min_samples_split) return id;

    const double parent = term(G, H);
    Split best;
    best.score = 1e-12;
    std::vector<std::size_t> order;
    for (int f = 0; f < X_.cols(); ++f) {
      sort_rows(X_, rows, f, order);
      double GL = 0, HL = 0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        GL += g_[order[i]];
        HL += h_[order[i]];
        const double a = X_(static_cast<Eigen::Index>(order[i]), f);
        const double b = X_(static_cast<Eigen::Index>(order[i + 1]), f);
        if (a == b) continue;
        if (i + 1 < hyper_.gbt_min_samples_leaf || order.size() - i - 1 < hyper_.gbt_min_samples_leaf) continue;
        const double gain = term(GL, HL) + term(G - GL, H - HL) - parent;
        if (gain > best.score) best = {f, 0.5 * (a + b), gain};
      }
    }
    if (best.feature < 0) return id;

    std::vector<std::size_t> left, right;
    for (auto r : rows) (X_(static_cast<Eigen::Index>(r), best.feature) <= best.threshold ? left : right).push_back(r);
    const auto l = grow(std::move(left), depth + 1);
    const auto r = grow(std::move(right), depth + 1);
    auto& node = tree_.nodes[id];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  const FeatureMatrix& X_;
  const std::vector<double>& g_;
  const std::vector<double>& h_;
  const BaselineHyper& hyper_;
  Tree tree_;
};

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

}  // namespace

std::string_view to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::LogisticRegression: return "logistic_regression";
    case BaselineKind::RandomForest: return "random_forest";
    case BaselineKind::GradientBoostedTrees: return "gbt";
  }
  return "unknown";
}

std::string_view display_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::LogisticRegression: return "Logistic Regression";
    case BaselineKind::RandomForest: return "Random Forest";
    case BaselineKind::GradientBoostedTrees: return "Gradient Boosting";
  }
  return "unknown";
}

BaselineKind parse_baseline_kind(std::string_view name) {
  if (name == "logistic_regression" || name == "lr") return BaselineKind::LogisticRegression;
  if (name == "random_forest" || name == "rf") return BaselineKind::RandomForest;
  if (name == "gbt" || name == "xgboost") return BaselineKind::GradientBoostedTrees;
  throw ArgumentError("unknown baseline '" + std::string(name) + "'");
}

double Tree::predict(std::span<const double> x) const {
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    const auto& n = nodes[i];
    i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
  }
  return nodes[i].value;
}

std::size_t Tree::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.feature < 0; }));
}

Tree fit_cart(const FeatureMatrix& X, std::span<const std::uint8_t> y, std::span<const std::size_t> rows,
              const CartOptions& options, std::uint64_t seed) {
  if (static_cast<std::size_t>(X.rows()) != y.size()) throw ArgumentError("X and y have different row counts");
  for (auto r : rows)
    if (r >= y.size()) throw ArgumentError("row index out of range");
  return CartBuilder(X, y, options, seed).build({rows.begin(), rows.end()});
}

double logistic_objective(const Eigen::VectorXd& w, double b, const FeatureMatrix& X, std::span<const std::uint8_t> y,
                          double l2) {
  const Eigen::VectorXd z = (X * w).array() + b;
  double loss = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) loss += softplus(z(i)) - y[static_cast<std::size_t>(i)] * z(i);
  return loss / static_cast<double>(std::max<Eigen::Index>(z.size(), 1)) + 0.5 * l2 * w.squaredNorm();
}

BaselineModel fit(BaselineKind kind, const FeatureMatrix& X, std::span<const std::uint8_t> y,
                  const BaselineHyper& hyper, std::uint64_t seed, std::vector<double>* loss_trace) {
  if (static_cast<std::size_t>(X.rows()) != y.size())
    throw ArgumentError("X has " + std::to_string(X.rows()) + " rows but y has " + std::to_string(y.size()));
  if (X.cols() == 0) throw ArgumentError("X has no feature columns");
  std::size_t pos = 0;
  for (auto v : y) {
    if (v > 1) throw ArgumentError("labels must be 0 or 1");
    pos += v;
  }

  BaselineModel m;
  m.kind_ = kind;
  m.d_ = static_cast<std::size_t>(X.cols());
  const std::size_t n = y.size();
  if (pos == 0 || pos == n) {
    m.constant_ = true;
    m.constant_value_ = std::clamp(n == 0 ? 0.5 : static_cast<double>(pos) / static_cast<double>(n), 0.01, 0.99);
    return m;
  }

  switch (kind) {
    case BaselineKind::LogisticRegression: {
      Eigen::VectorXd w = Eigen::VectorXd::Zero(X.cols());
      double b = 0;
      Eigen::VectorXd yv(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) yv(static_cast<Eigen::Index>(i)) = y[i];
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t it = 0; it < hyper.lr_iterations; ++it) {
        if (loss_trace) loss_trace->push_back(logistic_objective(w, b, X, y, hyper.lr_l2));
        Eigen::VectorXd r = (X * w).array() + b;
        for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = sigmoid(r(i)) - yv(i);
        const Eigen::VectorXd gw = inv_n * (X.transpose() * r) + hyper.lr_l2 * w;
        const double gb = inv_n * r.sum();
        w -= hyper.lr_step * gw;
        b -= hyper.lr_step * gb;
      }
      if (loss_trace) loss_trace->push_back(logistic_objective(w, b, X, y, hyper.lr_l2));
      m.weights_ = std::move(w);
      m.bias_ = b;
      break;
    }
    case BaselineKind::RandomForest: {
      CartOptions opt;
      opt.max_depth = hyper.rf_max_depth;
      opt.min_samples_leaf = hyper.rf_min_samples_leaf;
      opt.max_features = hyper.rf_max_features != 0
                             ? hyper.rf_max_features
                             : std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(m.d_)))));
      if (hyper.rf_trees == 0) throw ArgumentError("random forest needs at least one tree");
      for (std::size_t t = 0; t < hyper.rf_trees; ++t) {
        const auto tree_seed = Rng::derive(seed, "forest-tree:" + std::to_string(t));
        Rng rng(tree_seed);
        std::vector<std::size_t> rows;
        if (hyper.rf_bootstrap) {
          rows.resize(n);
          for (auto& r : rows) r = static_cast<std::size_t>(rng.below(n));
        } else {
          rows = all_rows(n);
        }
        m.trees_.push_back(CartBuilder(X, y, opt, rng.next()).build(std::move(rows)));
      }
      break;
    }
    case BaselineKind::GradientBoostedTrees: {
      const double prior = static_cast<double>(pos) / static_cast<double>(n);
      m.bias_ = std::log(prior / (1.0 - prior));
      m.learning_rate_ = hyper.gbt_learning_rate;
      std::vector<double> F(n, m.bias_), g(n), h(n);
      bool all_stumps = true;
      for (std::size_t round = 0; round < hyper.gbt_rounds; ++round) {
        for (std::size_t i = 0; i < n; ++i) {
          const double p = sigmoid(F[i]);
          g[i] = p - y[i];
          h[i] = p * (1.0 - p);
        }
        Tree tree = BoostBuilder(X, g, h, hyper).build(all_rows(n));
        for (std::size_t i = 0; i < n; ++i) F[i] += m.learning_rate_ * tree.predict(row_of(X, static_cast<Eigen::Index>(i)));
        all_stumps = all_stumps && tree.nodes.size() == 1;
        m.trees_.push_back(std::move(tree));
      }
      // Leaf-only trees shift every score by the same amount.
      m.constant_ = all_stumps;
      if (m.constant_) {
        double f = m.bias_;
        for (const auto& t : m.trees_) f += m.learning_rate_ * t.nodes[0].value;
        m.constant_value_ = sigmoid(f);
      }
      break;
    }
  }
  return m;
}

double BaselineModel::predict_one(std::span<const double> x) const {
  if (x.size() != d_)
    throw ArgumentError("expected " + std::to_string(d_) + " features, got " + std::to_string(x.size()));
  if (constant_) return constant_value_;
  switch (kind_) {
    case BaselineKind::LogisticRegression: {
      double z = bias_;
      for (std::size_t j = 0; j < d_; ++j) z += weights_(static_cast<Eigen::Index>(j)) * x[j];
      return sigmoid(z);
    }
    case BaselineKind::RandomForest: {
      double s = 0;
      for (const auto& t : trees_) s += t.predict(x);
      return std::clamp(s / static_cast<double>(trees_.size()), 0.0, 1.0);
    }
    case BaselineKind::GradientBoostedTrees: {
      double f = bias_;
      for (const auto& t : trees_) f += learning_rate_ * t.predict(x);
      return sigmoid(f);
    }
  }
  return constant_value_;
}

std::vector<double> BaselineModel::predict_proba(const FeatureMatrix& X) const {
  if (static_cast<std::size_t>(X.cols()) != d_)
    throw ArgumentError("expected " + std::to_string(d_) + " feature columns, got " + std::to_string(X.cols()));
  std::vector<double> out(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) out[static_cast<std::size_t>(i)] = predict_one(row_of(X, i));
  return out;
}

FeatureMatrix feature_matrix(std::span<const PatientRecord> records, std::span<const std::size_t> rows) {
  if (rows.empty()) return FeatureMatrix(0, records.empty() ? 0 : static_cast<Eigen::Index>(records.front().values.size()));
  if (rows.front() >= records.size()) throw ArgumentError("row index out of range");
  const auto d = records[rows.front()].values.size();
  FeatureMatrix X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= records.size()) throw ArgumentError("row index out of range");
    const auto& v = records[rows[i]].values;
    if (v.size() != d) throw ArgumentError("records have different widths");
    for (std::size_t j = 0; j < d; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
  }
  return X;
}

FeatureMatrix feature_matrix(std::span<const PatientRecord> records) {
  std::vector<std::size_t> rows(records.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return feature_matrix(records, rows);
}

}  // namespace convrisk::baselines
