#pragma once

// Linear nuisance models: least squares with rank-revealing QR, LASSO by
// cyclic coordinate descent, and logistic regression by damped Newton steps.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cfdml/error.hpp"

namespace cfdml::linear {

struct LinearModel {
  double intercept = 0.0;
  Eigen::VectorXd coef;  // zero for dropped columns
  std::vector<std::string> warnings;

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const {
    return (X * coef).array() + intercept;
  }
};

/// Least squares with an intercept. Linearly dependent columns (after
/// centering) are detected by column-pivoted QR and dropped.
inline LinearModel fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double rank_tol = 1e-9) {
  require(X.rows() == y.size(), Errc::shape, "OLS rows differ from target length");
  const Eigen::RowVectorXd mx = X.colwise().mean();
  const double my = y.mean();
  const Eigen::MatrixXd Xc = X.rowwise() - mx;
  const Eigen::VectorXd yc = y.array() - my;

  LinearModel m;
  m.coef = Eigen::VectorXd::Zero(X.cols());
  if (X.cols() > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xc);
    qr.setThreshold(rank_tol);
    const Eigen::Index rank = qr.rank();
    if (rank > 0) {
      std::vector<Eigen::Index> keep;
      for (Eigen::Index k = 0; k < rank; ++k) keep.push_back(qr.colsPermutation().indices()(k));
      std::sort(keep.begin(), keep.end());
      Eigen::MatrixXd sub(X.rows(), static_cast<Eigen::Index>(keep.size()));
      for (std::size_t k = 0; k < keep.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = Xc.col(keep[k]);
      const Eigen::VectorXd b = sub.colPivHouseholderQr().solve(yc);
      for (std::size_t k = 0; k < keep.size(); ++k) m.coef(keep[k]) = b(static_cast<Eigen::Index>(k));
    }
    if (rank < X.cols())
      m.warnings.push_back("rank-deficient design: dropped " + std::to_string(X.cols() - rank) +
                           " linearly dependent column(s)");
  }
  m.intercept = my - mx.dot(m.coef);
  return m;
}

inline double soft_threshold(double z, double lambda) {
  if (z > lambda) return z - lambda;
  if (z < -lambda) return z + lambda;
  return 0.0;
}

struct LassoOptions {
  double lambda = 1e-3;
  int max_sweeps = 100000;
  double tolerance = 1e-7;
};

struct Standardization {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;  // population SD; 0 for constant columns
};

inline Standardization standardization_of(const Eigen::MatrixXd& X) {
  Standardization s;
  s.mean = X.colwise().mean();
  s.scale.resize(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    s.scale(j) = std::sqrt((X.col(j).array() - s.mean(j)).square().mean());
  return s;
}

/// Smallest penalty at which every standardized coefficient is zero.
inline double lasso_lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  const auto s = standardization_of(X);
  const Eigen::VectorXd yc = y.array() - y.mean();
  double best = 0.0;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    if (s.scale(j) <= 0.0) continue;
    const double g = ((X.col(j).array() - s.mean(j)) / s.scale(j)).matrix().dot(yc) / static_cast<double>(X.rows());
    best = std::max(best, std::fabs(g));
  }
  return best;
}

/// Minimizes (1/2n)||y - Xb||^2 + lambda ||b||_1 over internally
/// standardized features; coefficients are returned on the original scale.
inline LinearModel fit_lasso(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LassoOptions& opt) {
  require(X.rows() == y.size(), Errc::shape, "LASSO rows differ from target length");
  require(opt.lambda >= 0.0, Errc::domain, "LASSO penalty must be nonnegative");
  const Eigen::Index n = X.rows(), p = X.cols();
  const auto st = standardization_of(X);
  Eigen::MatrixXd Z(n, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    if (st.scale(j) > 0.0) Z.col(j) = (X.col(j).array() - st.mean(j)) / st.scale(j);
    else Z.col(j).setZero();
  }
  const double my = y.mean();
  Eigen::VectorXd r = y.array() - my;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  const double inv_n = 1.0 / static_cast<double>(n);
  int sweep = 0;
  double max_change = 0.0;
  for (; sweep < opt.max_sweeps; ++sweep) {
    max_change = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (st.scale(j) <= 0.0) continue;
      const double rho = Z.col(j).dot(r) * inv_n + b(j);
      const double updated = soft_threshold(rho, opt.lambda);
      const double delta = updated - b(j);
      if (delta != 0.0) {
        r.noalias() -= delta * Z.col(j);
        b(j) = updated;
        max_change = std::max(max_change, std::fabs(delta));
      }
    }
    if (max_change < opt.tolerance) break;
  }
  require(sweep < opt.max_sweeps, Errc::convergence,
          "LASSO did not converge in " + std::to_string(opt.max_sweeps) + " sweeps (last max change " +
              std::to_string(max_change) + ")");
  LinearModel m;
  m.coef = Eigen::VectorXd::Zero(p);
  for (Eigen::Index j = 0; j < p; ++j)
    if (st.scale(j) > 0.0) m.coef(j) = b(j) / st.scale(j);
  m.intercept = my - st.mean.dot(m.coef);
  return m;
}

struct LogisticOptions {
  int max_iterations = 100;
  double tolerance = 1e-10;
  double ridge = 0.0;  // L2 penalty on slopes (not the intercept)
};

struct LogisticModel {
  double intercept = 0.0;
  Eigen::VectorXd coef;
  int iterations = 0;

  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& X) const {
    const Eigen::ArrayXd eta = ((X * coef).array() + intercept);
    return (1.0 / (1.0 + (-eta).exp())).matrix();
  }
};

/// Penalized log-likelihood divided by n.
inline double logistic_objective(const Eigen::MatrixXd& Xa, const Eigen::VectorXd& y, const Eigen::VectorXd& beta,
                                 double ridge) {
  const Eigen::ArrayXd eta = Xa * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    // log(1 + exp(eta)) computed stably
    const double e = eta(i);
    const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    ll += y(i) * e - softplus;
  }
  return ll / static_cast<double>(eta.size()) - 0.5 * ridge * beta.tail(beta.size() - 1).squaredNorm();
}

/// Newton-Raphson with step halving. Perfect separation shows up as fitted
/// probabilities collapsing to 0/1 or the iteration cap; both raise a
/// convergence error so callers can retry with a ridge penalty.
inline LogisticModel fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LogisticOptions& opt) {
  require(X.rows() == y.size(), Errc::shape, "logistic rows differ from target length");
  for (Eigen::Index i = 0; i < y.size(); ++i)
    require(y(i) == 0.0 || y(i) == 1.0, Errc::domain, "logistic target must be 0/1");
  const Eigen::Index n = X.rows(), p = X.cols();
  Eigen::MatrixXd Xa(n, p + 1);
  Xa.col(0).setOnes();
  Xa.rightCols(p) = X;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
  const double ybar = y.mean();
  if (ybar > 0.0 && ybar < 1.0) beta(0) = std::log(ybar / (1.0 - ybar));
  double obj = logistic_objective(Xa, y, beta, opt.ridge);
  Eigen::MatrixXd penalty = Eigen::MatrixXd::Identity(p + 1, p + 1) * opt.ridge;
  penalty(0, 0) = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);

  LogisticModel m;
  bool converged = false;
  for (int it = 0; it < opt.max_iterations; ++it) {
    m.iterations = it + 1;
    const Eigen::ArrayXd prob = 1.0 / (1.0 + (-(Xa * beta).array()).exp());
    if (opt.ridge == 0.0 && (prob.minCoeff() < 1e-12 || prob.maxCoeff() > 1.0 - 1e-12))
      fail(Errc::convergence, "logistic fit separates the classes (fitted probabilities reach 0/1)");
    const Eigen::VectorXd grad = Xa.transpose() * (y.array() - prob).matrix() * inv_n - penalty * beta;
    const Eigen::ArrayXd w = prob * (1.0 - prob);
    Eigen::MatrixXd H = Xa.transpose() * (Xa.array().colwise() * w).matrix() * inv_n + penalty;
    H.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = H.ldlt().solve(grad);
    double t = 1.0;
    Eigen::VectorXd candidate = beta + step;
    double cand_obj = logistic_objective(Xa, y, candidate, opt.ridge);
    while (!(cand_obj >= obj - 1e-15) && t > 1e-8) {
      t *= 0.5;
      candidate = beta + t * step;
      cand_obj = logistic_objective(Xa, y, candidate, opt.ridge);
    }
    require(std::isfinite(cand_obj), Errc::convergence, "logistic objective became non-finite");
    const double change = (candidate - beta).cwiseAbs().maxCoeff();
    beta = candidate;
    obj = cand_obj;
    if (change < opt.tolerance || grad.cwiseAbs().maxCoeff() < opt.tolerance) {
      converged = true;
      break;
    }
  }
  require(converged, Errc::convergence,
          "logistic regression did not converge in " + std::to_string(opt.max_iterations) + " Newton steps");
  m.intercept = beta(0);
  m.coef = beta.tail(p);
  return m;
}

}  // namespace cfdml::linear
