#pragma once

// Uniform interface over the nuisance regression learners: specification,
// fitting, prediction, cross-fitted out-of-fold prediction and a versioned
// binary format for fitted models.

#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cfdml/error.hpp"
#include "cfdml/linear.hpp"
#include "cfdml/rng.hpp"
#include "cfdml/tree.hpp"

namespace cfdml {

enum class LearnerKind { gbdt, gbdt_alt, random_forest, lasso, ols, logistic };

inline std::string to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::gbdt: return "gbdt";
    case LearnerKind::gbdt_alt: return "gbdt_alt";
    case LearnerKind::random_forest: return "random_forest";
    case LearnerKind::lasso: return "lasso";
    case LearnerKind::ols: return "ols";
    case LearnerKind::logistic: return "logistic";
  }
  return "";
}

inline LearnerKind parse_learner_kind(const std::string& s) {
  if (s == "gbdt") return LearnerKind::gbdt;
  if (s == "gbdt_alt") return LearnerKind::gbdt_alt;
  if (s == "random_forest") return LearnerKind::random_forest;
  if (s == "lasso") return LearnerKind::lasso;
  if (s == "ols") return LearnerKind::ols;
  if (s == "logistic") return LearnerKind::logistic;
  fail(Errc::schema, "unknown learner kind '" + s + "'");
}

struct LearnerSpec {
  LearnerKind kind = LearnerKind::gbdt;
  std::map<std::string, double> hyper;
  std::uint64_t seed = 0;

  /// Defaults for every hyperparameter a learner accepts.
  static std::map<std::string, double> defaults(LearnerKind kind) {
    switch (kind) {
      case LearnerKind::gbdt:
        return {{"trees", 200}, {"depth", 3}, {"learning_rate", 0.1}, {"min_leaf", 20}, {"subsample", 1.0}};
      case LearnerKind::gbdt_alt:
        return {{"trees", 400}, {"depth", 6}, {"learning_rate", 0.05}, {"min_leaf", 20}, {"subsample", 1.0}};
      case LearnerKind::random_forest:
        return {{"trees", 300}, {"depth", 12}, {"min_leaf", 5}, {"max_features", 0}};
      case LearnerKind::lasso: return {{"lambda", 1e-3}, {"iterations", 100000}, {"tolerance", 1e-7}};
      case LearnerKind::ols: return {};
      case LearnerKind::logistic: return {{"iterations", 100}, {"ridge", 0.0}, {"tolerance", 1e-10}};
    }
    return {};
  }

  static LearnerSpec make(LearnerKind kind, std::map<std::string, double> overrides = {}, std::uint64_t seed = 0) {
    LearnerSpec s{kind, defaults(kind), seed};
    for (const auto& [k, v] : overrides) s.hyper[k] = v;
    s.validate();
    return s;
  }

  double get(const std::string& key) const {
    auto it = hyper.find(key);
    if (it != hyper.end()) return it->second;
    const auto d = defaults(kind);
    auto jt = d.find(key);
    require(jt != d.end(), Errc::lookup, to_string(kind) + " has no hyperparameter '" + key + "'");
    return jt->second;
  }

  void validate() const {
    const auto d = defaults(kind);
    for (const auto& [k, v] : hyper) {
      require(d.count(k) > 0, Errc::schema, to_string(kind) + " does not accept hyperparameter '" + k + "'");
      require(std::isfinite(v), Errc::domain, "hyperparameter '" + k + "' is not finite");
    }
    auto positive = [&](const std::string& k) {
      if (d.count(k)) require(get(k) > 0.0, Errc::domain, "hyperparameter '" + k + "' must be positive");
    };
    auto nonneg = [&](const std::string& k) {
      if (d.count(k)) require(get(k) >= 0.0, Errc::domain, "hyperparameter '" + k + "' must be nonnegative");
    };
    positive("trees");
    nonneg("depth");
    positive("learning_rate");
    positive("min_leaf");
    positive("iterations");
    positive("tolerance");
    nonneg("lambda");
    nonneg("ridge");
    nonneg("max_features");
    if (d.count("subsample"))
      require(get("subsample") > 0.0 && get("subsample") <= 1.0, Errc::domain, "subsample must lie in (0, 1]");
    if (d.count("learning_rate"))
      require(get("learning_rate") <= 1.0, Errc::domain, "learning_rate must lie in (0, 1]");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = to_string(kind);
    j["hyperparameters"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : hyper) j["hyperparameters"][k] = v;
    j["seed"] = seed;
    return j;
  }

  static LearnerSpec from_json(const nlohmann::ordered_json& j) {
    const auto kind = parse_learner_kind(j.at("kind").get<std::string>());
    std::map<std::string, double> over;
    if (j.contains("hyperparameters"))
      for (const auto& [k, v] : j.at("hyperparameters").items()) over[k] = v.get<double>();
    LearnerSpec s{kind, defaults(kind), j.value("seed", std::uint64_t{0})};
    for (const auto& [k, v] : over) {
      require(s.hyper.count(k) > 0, Errc::schema, to_string(kind) + " does not accept hyperparameter '" + k + "'");
      s.hyper[k] = v;
    }
    s.validate();
    return s;
  }
};

struct FittedLearner {
  LearnerKind kind = LearnerKind::ols;
  Eigen::Index n_features = 0;
  std::variant<linear::LinearModel, linear::LogisticModel, tree::BoostedEnsemble, tree::Forest> state;
  std::vector<std::string> warnings;
};

inline FittedLearner fit(const LearnerSpec& spec, const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  spec.validate();
  require(X.rows() == y.size(), Errc::shape, "feature rows differ from target length");
  require(X.rows() >= 2, Errc::size, "fitting needs at least two rows");
  require(X.allFinite() && y.allFinite(), Errc::numeric, "non-finite cell in features or target");
  FittedLearner out;
  out.kind = spec.kind;
  out.n_features = X.cols();
  switch (spec.kind) {
    case LearnerKind::gbdt:
    case LearnerKind::gbdt_alt: {
      tree::BoostingOptions o;
      o.trees = static_cast<int>(spec.get("trees"));
      o.max_depth = static_cast<int>(spec.get("depth"));
      o.learning_rate = spec.get("learning_rate");
      o.min_leaf = spec.get("min_leaf");
      o.subsample = spec.get("subsample");
      out.state = tree::fit_boosting(X, y, o, spec.seed);
      break;
    }
    case LearnerKind::random_forest: {
      tree::ForestOptions o;
      o.trees = static_cast<int>(spec.get("trees"));
      o.max_depth = static_cast<int>(spec.get("depth"));
      o.min_leaf = spec.get("min_leaf");
      o.max_features = static_cast<std::size_t>(spec.get("max_features"));
      out.state = tree::fit_forest(X, y, o, spec.seed);
      break;
    }
    case LearnerKind::lasso: {
      linear::LassoOptions o;
      o.lambda = spec.get("lambda");
      o.max_sweeps = static_cast<int>(spec.get("iterations"));
      o.tolerance = spec.get("tolerance");
      out.state = linear::fit_lasso(X, y, o);
      break;
    }
    case LearnerKind::ols: {
      auto m = linear::fit_ols(X, y);
      out.warnings = m.warnings;
      out.state = std::move(m);
      break;
    }
    case LearnerKind::logistic: {
      linear::LogisticOptions o;
      o.max_iterations = static_cast<int>(spec.get("iterations"));
      o.ridge = spec.get("ridge");
      o.tolerance = spec.get("tolerance");
      out.state = linear::fit_logistic(X, y, o);
      break;
    }
  }
  return out;
}

/// Pointwise predictions; probabilities for logistic models.
inline Eigen::VectorXd predict(const FittedLearner& model, const Eigen::MatrixXd& X) {
  require(X.cols() == model.n_features, Errc::shape,
          "prediction layout has " + std::to_string(X.cols()) + " features, model was trained on " +
              std::to_string(model.n_features));
  return std::visit(
      [&](const auto& m) -> Eigen::VectorXd {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, linear::LinearModel>) {
          return m.predict(X);
        } else if constexpr (std::is_same_v<T, linear::LogisticModel>) {
          return m.predict_proba(X);
        } else {
          Eigen::VectorXd out(X.rows());
          for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = m.predict_row(X, i);
          return out;
        }
      },
      model.state);
}

// ---------------------------------------------------------------------------
// Cross-fitting
// ---------------------------------------------------------------------------

/// Seeded permutation cut into `folds` near-equal parts; entry i is row i's fold.
inline std::vector<int> assign_folds(std::size_t rows, int folds, std::uint64_t seed) {
  require(folds >= 2, Errc::size, "cross-fitting needs at least two folds");
  require(static_cast<std::size_t>(folds) <= rows, Errc::size,
          std::to_string(folds) + " folds requested for " + std::to_string(rows) + " rows");
  std::vector<std::size_t> perm(rows);
  for (std::size_t i = 0; i < rows; ++i) perm[i] = i;
  Rng rng = make_rng(seed, seed_offset::folds);
  shuffle(perm, rng);
  std::vector<int> fold_of(rows);
  for (std::size_t k = 0; k < rows; ++k)
    fold_of[perm[k]] = static_cast<int>(k * static_cast<std::size_t>(folds) / rows);
  return fold_of;
}

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = X.row(idx[k]);
  return out;
}

inline Eigen::VectorXd take_rows(const Eigen::VectorXd& y, const std::vector<Eigen::Index>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Eigen::Index>(k)) = y(idx[k]);
  return out;
}

struct OutOfFold {
  Eigen::VectorXd predictions;
  std::vector<int> fold_of;
  std::vector<std::string> warnings;
};

/// Each row is predicted by a model trained on the other folds. Fold f
/// trains with seed mix_seed(spec.seed, f).
inline OutOfFold kfold_oof_predict(const LearnerSpec& spec, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   const std::vector<int>& fold_of) {
  require(static_cast<std::size_t>(X.rows()) == fold_of.size(), Errc::shape, "fold vector length mismatch");
  const int folds = fold_of.empty() ? 0 : *std::max_element(fold_of.begin(), fold_of.end()) + 1;
  OutOfFold out;
  out.predictions = Eigen::VectorXd::Zero(X.rows());
  out.fold_of = fold_of;
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> train, test;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
      (fold_of[i] == f ? test : train).push_back(static_cast<Eigen::Index>(i));
    if (test.empty()) continue;
    LearnerSpec fold_spec = spec;
    fold_spec.seed = mix_seed(spec.seed, static_cast<std::uint64_t>(f));
    const auto model = fit(fold_spec, take_rows(X, train), take_rows(y, train));
    for (const auto& w : model.warnings) out.warnings.push_back("fold " + std::to_string(f) + ": " + w);
    const Eigen::VectorXd pred = predict(model, take_rows(X, test));
    for (std::size_t k = 0; k < test.size(); ++k) out.predictions(test[k]) = pred(static_cast<Eigen::Index>(k));
  }
  return out;
}

inline OutOfFold kfold_oof_predict(const LearnerSpec& spec, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   int folds, std::uint64_t seed) {
  require(static_cast<std::size_t>(folds) <= static_cast<std::size_t>(X.rows()), Errc::size,
          std::to_string(folds) + " folds requested for " + std::to_string(X.rows()) + " rows");
  return kfold_oof_predict(spec, X, y, assign_folds(static_cast<std::size_t>(X.rows()), folds, seed));
}

// ---------------------------------------------------------------------------
// Binary model format: "CFDL" magic, u32 version, u8 kind, u64 feature count,
// then a kind-specific little-endian payload of u64 counts and f64 values.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kLearnerFormatVersion = 1;

namespace detail {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(static_cast<bool>(in), Errc::parse, "truncated learner file");
  return v;
}

inline void put_vector(std::ostream& out, const Eigen::VectorXd& v) {
  put<std::uint64_t>(out, static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) put<double>(out, v(i));
}

inline Eigen::VectorXd get_vector(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  require(n < (1ULL << 32), Errc::parse, "implausible vector length in learner file");
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = get<double>(in);
  return v;
}

inline void put_trees(std::ostream& out, const std::vector<tree::RegressionTree>& trees) {
  put<std::uint64_t>(out, trees.size());
  for (const auto& t : trees) {
    put<std::uint64_t>(out, t.nodes.size());
    for (const auto& n : t.nodes) {
      put<std::int32_t>(out, n.feature);
      put<double>(out, n.threshold);
      put<std::int32_t>(out, n.left);
      put<std::int32_t>(out, n.right);
      put<double>(out, n.value);
    }
  }
}

inline std::vector<tree::RegressionTree> get_trees(std::istream& in) {
  const auto count = get<std::uint64_t>(in);
  require(count < (1ULL << 24), Errc::parse, "implausible tree count in learner file");
  std::vector<tree::RegressionTree> trees(count);
  for (auto& t : trees) {
    const auto nodes = get<std::uint64_t>(in);
    require(nodes < (1ULL << 28), Errc::parse, "implausible node count in learner file");
    t.nodes.resize(nodes);
    for (auto& n : t.nodes) {
      n.feature = get<std::int32_t>(in);
      n.threshold = get<double>(in);
      n.left = get<std::int32_t>(in);
      n.right = get<std::int32_t>(in);
      n.value = get<double>(in);
    }
  }
  return trees;
}

}  // namespace detail

inline void save_learner(std::ostream& out, const FittedLearner& m) {
  out.write("CFDL", 4);
  detail::put<std::uint32_t>(out, kLearnerFormatVersion);
  detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(m.kind));
  detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(m.n_features));
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, linear::LinearModel> || std::is_same_v<T, linear::LogisticModel>) {
          detail::put<double>(out, s.intercept);
          detail::put_vector(out, s.coef);
        } else if constexpr (std::is_same_v<T, tree::BoostedEnsemble>) {
          detail::put<double>(out, s.base);
          detail::put<double>(out, s.learning_rate);
          detail::put_trees(out, s.trees);
        } else {
          detail::put_trees(out, s.trees);
        }
      },
      m.state);
}

inline FittedLearner load_learner(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  require(static_cast<bool>(in) && std::memcmp(magic, "CFDL", 4) == 0, Errc::parse, "not a learner file");
  const auto version = detail::get<std::uint32_t>(in);
  require(version == kLearnerFormatVersion, Errc::parse, "unsupported learner format version " + std::to_string(version));
  const auto kind_byte = detail::get<std::uint8_t>(in);
  require(kind_byte <= static_cast<std::uint8_t>(LearnerKind::logistic), Errc::parse, "unknown learner kind byte");
  FittedLearner m;
  m.kind = static_cast<LearnerKind>(kind_byte);
  m.n_features = static_cast<Eigen::Index>(detail::get<std::uint64_t>(in));
  switch (m.kind) {
    case LearnerKind::ols:
    case LearnerKind::lasso: {
      linear::LinearModel s;
      s.intercept = detail::get<double>(in);
      s.coef = detail::get_vector(in);
      m.state = std::move(s);
      break;
    }
    case LearnerKind::logistic: {
      linear::LogisticModel s;
      s.intercept = detail::get<double>(in);
      s.coef = detail::get_vector(in);
      m.state = std::move(s);
      break;
    }
    case LearnerKind::gbdt:
    case LearnerKind::gbdt_alt: {
      tree::BoostedEnsemble s;
      s.base = detail::get<double>(in);
      s.learning_rate = detail::get<double>(in);
      s.trees = detail::get_trees(in);
      m.state = std::move(s);
      break;
    }
    case LearnerKind::random_forest: {
      tree::Forest s;
      s.trees = detail::get_trees(in);
      m.state = std::move(s);
      break;
    }
  }
  return m;
}

}  // namespace cfdml
