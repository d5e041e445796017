#pragma once

// Regression trees grown level by level over presorted feature columns,
// plus the two ensembles built from them (boosting and bagging).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cfdml/error.hpp"
#include "cfdml/rng.hpp"

namespace cfdml::tree {

struct Node {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<Node> nodes;

  double predict_row(const Eigen::MatrixXd& X, Eigen::Index row) const {
    int k = 0;
    while (nodes[static_cast<std::size_t>(k)].feature >= 0) {
      const Node& n = nodes[static_cast<std::size_t>(k)];
      k = X(row, n.feature) <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(k)].value;
  }

  std::size_t depth() const {
    std::vector<std::size_t> d(nodes.size(), 0);
    std::size_t best = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k].feature < 0) continue;
      d[static_cast<std::size_t>(nodes[k].left)] = d[k] + 1;
      d[static_cast<std::size_t>(nodes[k].right)] = d[k] + 1;
      best = std::max(best, d[k] + 1);
    }
    return best;
  }
};

/// Per-feature row order, computed once per training matrix and shared by
/// every tree grown on it.
struct SortedColumns {
  std::vector<std::vector<std::uint32_t>> order;
  std::vector<std::vector<double>> values;

  explicit SortedColumns(const Eigen::MatrixXd& X) {
    const auto n = static_cast<std::uint32_t>(X.rows());
    order.resize(static_cast<std::size_t>(X.cols()));
    values.resize(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index f = 0; f < X.cols(); ++f) {
      auto& o = order[static_cast<std::size_t>(f)];
      o.resize(n);
      std::iota(o.begin(), o.end(), 0u);
      std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) { return X(a, f) < X(b, f); });
      auto& v = values[static_cast<std::size_t>(f)];
      v.resize(n);
      for (std::uint32_t k = 0; k < n; ++k) v[k] = X(o[k], f);
    }
  }
};

struct GrowOptions {
  int max_depth = 3;
  double min_leaf = 1.0;        // minimum total row weight per child
  std::size_t max_features = 0;  // features drawn per node; 0 = all
};

/// Grows one variance-reduction tree on `target` with nonnegative row
/// weights (0 excludes a row; bootstrap counts repeat it). Ties in gain go
/// to the lowest feature index, then the lowest threshold.
inline RegressionTree grow(const Eigen::MatrixXd& X, const SortedColumns& sorted, std::span<const double> target,
                           std::span<const double> weight, const GrowOptions& opt, Rng* rng = nullptr) {
  const std::size_t n = static_cast<std::size_t>(X.rows());
  const std::size_t p = static_cast<std::size_t>(X.cols());
  RegressionTree tree;

  struct Stats {
    double w = 0.0, s = 0.0, ss = 0.0;
  };
  std::vector<int> node_of(n, -1);
  Stats root;
  for (std::size_t i = 0; i < n; ++i) {
    if (weight[i] <= 0.0) continue;
    node_of[i] = 0;
    root.w += weight[i];
    root.s += weight[i] * target[i];
    root.ss += weight[i] * target[i] * target[i];
  }
  require(root.w > 0.0, Errc::size, "tree growth with no weighted rows");
  tree.nodes.push_back({-1, 0.0, -1, -1, root.s / root.w});

  std::vector<int> frontier{0};
  std::vector<Stats> stats{root};  // indexed by node id

  for (int depth = 0; depth < opt.max_depth && !frontier.empty(); ++depth) {
    // slot per frontier node
    std::vector<int> slot(tree.nodes.size(), -1);
    std::vector<std::size_t> splittable;
    for (std::size_t k = 0; k < frontier.size(); ++k) {
      const auto& st = stats[static_cast<std::size_t>(frontier[k])];
      if (st.w >= 2.0 * opt.min_leaf) {
        slot[static_cast<std::size_t>(frontier[k])] = static_cast<int>(splittable.size());
        splittable.push_back(static_cast<std::size_t>(frontier[k]));
      }
    }
    if (splittable.empty()) break;
    const std::size_t m = splittable.size();

    // feature mask per splittable node
    std::vector<char> uses;
    const bool subsample = opt.max_features > 0 && opt.max_features < p;
    if (subsample) {
      require(rng != nullptr, Errc::domain, "feature subsampling needs a generator");
      uses.assign(m * p, 0);
      std::vector<std::size_t> feats(p);
      for (std::size_t k = 0; k < m; ++k) {
        std::iota(feats.begin(), feats.end(), 0);
        // partial Fisher-Yates
        for (std::size_t j = 0; j < opt.max_features; ++j) {
          const std::size_t pick = j + uniform_index(*rng, p - j);
          std::swap(feats[j], feats[pick]);
          uses[k * p + feats[j]] = 1;
        }
      }
    }

    std::vector<double> best_gain(m, 0.0), best_thr(m, 0.0);
    std::vector<int> best_feat(m, -1);
    std::vector<double> gain_floor(m);
    for (std::size_t k = 0; k < m; ++k) {
      const auto& st = stats[splittable[k]];
      const double sse = st.ss - st.s * st.s / st.w;
      gain_floor[k] = std::max(1e-12 * st.ss, 1e-300) + (sse <= 0.0 ? INFINITY : 0.0);
    }
    std::vector<double> wl(m), sl(m), last(m);
    std::vector<char> seen(m);

    for (std::size_t f = 0; f < p; ++f) {
      std::fill(wl.begin(), wl.end(), 0.0);
      std::fill(sl.begin(), sl.end(), 0.0);
      std::fill(seen.begin(), seen.end(), 0);
      const auto& order = sorted.order[f];
      const auto& vals = sorted.values[f];
      for (std::size_t r = 0; r < n; ++r) {
        const std::uint32_t i = order[r];
        const int node = node_of[i];
        if (node < 0) continue;
        const int s = slot[static_cast<std::size_t>(node)];
        if (s < 0) continue;
        const auto k = static_cast<std::size_t>(s);
        if (subsample && !uses[k * p + f]) continue;
        const double x = vals[r];
        if (seen[k] && x > last[k]) {
          const auto& st = stats[splittable[k]];
          const double wr = st.w - wl[k];
          if (wl[k] >= opt.min_leaf && wr >= opt.min_leaf) {
            const double sr = st.s - sl[k];
            const double gain = sl[k] * sl[k] / wl[k] + sr * sr / wr - st.s * st.s / st.w;
            if (gain > best_gain[k] && gain > gain_floor[k]) {
              best_gain[k] = gain;
              best_feat[k] = static_cast<int>(f);
              best_thr[k] = 0.5 * (last[k] + x);
              if (!(best_thr[k] < x)) best_thr[k] = last[k];
            }
          }
        }
        wl[k] += weight[i];
        sl[k] += weight[i] * target[i];
        last[k] = x;
        seen[k] = 1;
      }
    }

    std::vector<int> next;
    for (std::size_t k = 0; k < m; ++k) {
      if (best_feat[k] < 0) continue;
      const std::size_t id = splittable[k];
      const int left = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});
      tree.nodes.push_back({});
      stats.push_back({});
      stats.push_back({});
      tree.nodes[id].feature = best_feat[k];
      tree.nodes[id].threshold = best_thr[k];
      tree.nodes[id].left = left;
      tree.nodes[id].right = left + 1;
      next.push_back(left);
      next.push_back(left + 1);
    }
    if (next.empty()) break;
    for (std::size_t i = 0; i < n; ++i) {
      const int node = node_of[i];
      if (node < 0) continue;
      const Node& parent = tree.nodes[static_cast<std::size_t>(node)];
      if (parent.feature < 0) {
        node_of[i] = -1;  // settled in a leaf
        continue;
      }
      const int child = X(static_cast<Eigen::Index>(i), parent.feature) <= parent.threshold ? parent.left : parent.right;
      node_of[i] = child;
      auto& st = stats[static_cast<std::size_t>(child)];
      st.w += weight[i];
      st.s += weight[i] * target[i];
      st.ss += weight[i] * target[i] * target[i];
    }
    for (int c : next) {
      const auto& st = stats[static_cast<std::size_t>(c)];
      tree.nodes[static_cast<std::size_t>(c)].value = st.s / st.w;
    }
    frontier = std::move(next);
  }
  return tree;
}

struct BoostingOptions {
  int trees = 200;
  int max_depth = 3;
  double learning_rate = 0.1;
  double min_leaf = 20.0;
  double subsample = 1.0;
};

struct BoostedEnsemble {
  double base = 0.0;
  double learning_rate = 0.1;
  std::vector<RegressionTree> trees;

  double predict_row(const Eigen::MatrixXd& X, Eigen::Index row) const {
    double f = base;
    for (const auto& t : trees) f += learning_rate * t.predict_row(X, row);
    return f;
  }
};

/// Stage-wise least-squares boosting with shrinkage.
inline BoostedEnsemble fit_boosting(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const BoostingOptions& opt,
                                    std::uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(X.rows());
  BoostedEnsemble model;
  model.learning_rate = opt.learning_rate;
  model.base = y.mean();
  const SortedColumns sorted(X);
  std::vector<double> fitted(n, model.base), residual(n), weight(n, 1.0);
  Rng rng = make_rng(seed, seed_offset::tree);
  const auto take = static_cast<std::size_t>(std::ceil(opt.subsample * static_cast<double>(n)));
  std::vector<std::size_t> perm(n);
  GrowOptions grow_opt{opt.max_depth, opt.min_leaf, 0};
  for (int t = 0; t < opt.trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) residual[i] = y(static_cast<Eigen::Index>(i)) - fitted[i];
    if (take < n) {
      std::iota(perm.begin(), perm.end(), 0);
      shuffle(perm, rng);
      std::fill(weight.begin(), weight.end(), 0.0);
      for (std::size_t k = 0; k < take; ++k) weight[perm[k]] = 1.0;
    }
    RegressionTree tree = grow(X, sorted, residual, weight, grow_opt);
    for (std::size_t i = 0; i < n; ++i)
      fitted[i] += opt.learning_rate * tree.predict_row(X, static_cast<Eigen::Index>(i));
    model.trees.push_back(std::move(tree));
  }
  return model;
}

struct ForestOptions {
  int trees = 300;
  int max_depth = 12;
  double min_leaf = 5.0;
  std::size_t max_features = 0;  // 0 = ceil(sqrt(p))
};

struct Forest {
  std::vector<RegressionTree> trees;

  double predict_row(const Eigen::MatrixXd& X, Eigen::Index row) const {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict_row(X, row);
    return s / static_cast<double>(trees.size());
  }
};

/// Bagged depth-capped trees on bootstrap resamples with per-node feature draws.
inline Forest fit_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ForestOptions& opt,
                         std::uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(X.rows());
  const std::size_t p = static_cast<std::size_t>(X.cols());
  Forest forest;
  const SortedColumns sorted(X);
  std::vector<double> target(y.data(), y.data() + n), weight(n);
  GrowOptions grow_opt{opt.max_depth, opt.min_leaf,
                       opt.max_features > 0 ? std::min(opt.max_features, p)
                                            : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(p))))};
  for (int t = 0; t < opt.trees; ++t) {
    Rng rng = make_rng(seed, seed_offset::tree + static_cast<std::uint64_t>(t));
    std::fill(weight.begin(), weight.end(), 0.0);
    for (std::size_t k = 0; k < n; ++k) weight[uniform_index(rng, n)] += 1.0;
    forest.trees.push_back(grow(X, sorted, target, weight, grow_opt, &rng));
  }
  return forest;
}

}  // namespace cfdml::tree
