#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pagg/detail/numeric.hpp"
#include "pagg/error.hpp"
#include "pagg/prototypes.hpp"

namespace pagg {

/// Per-set diagonal Gaussian mixture: weights pi (C), means mu (C×d), variances sigma (C×d).
struct MixtureParams {
  Eigen::VectorXd pi;
  Eigen::MatrixXd mu;
  Eigen::MatrixXd sigma;
  /// Components whose total responsibility fell below kDegenerateMass in the last
  /// M-step; their mu/sigma were carried over unchanged.
  std::vector<Index> frozen;

  Index components() const { return mu.rows(); }
  Index dim() const { return mu.cols(); }

  void validate(double var_floor) const {
    const Index C = mu.rows();
    if (C < 1 || mu.cols() < 1) throw ValidationError("mixture: empty parameters");
    if (pi.size() != C || sigma.rows() != C || sigma.cols() != mu.cols())
      throw ValidationError("mixture: inconsistent parameter shapes");
    if (!detail::all_finite(pi) || !detail::all_finite(mu) || !detail::all_finite(sigma))
      throw NumericalError("mixture: non-finite parameter");
    if ((pi.array() < 0.0).any()) throw ValidationError("mixture: negative weight");
    if (std::abs(pi.sum() - 1.0) > 1e-9) throw ValidationError("mixture: weights do not sum to 1");
    if ((sigma.array() < var_floor).any())
      throw ValidationError("mixture: variance below floor");
  }
};

struct EmConfig {
  int num_steps = 1;
  double var_floor = 1e-4;
  bool log_space = true;
  /// Record the incomplete-data log-likelihood before and after every step.
  bool record_likelihood = false;

  void validate() const {
    if (num_steps < 1) throw ValidationError("em: num_steps must be >= 1");
    if (!(var_floor > 0.0)) throw ValidationError("em: var_floor must be > 0");
  }
};

/// Responsibilities q (N×C); rows sum to one.
struct PosteriorMatrix {
  Eigen::MatrixXd q;
};

inline constexpr double kDegenerateMass = 1e-12;

/// Prototype initialisation: uniform weights, means at the prototypes, unit variances.
inline MixtureParams init_params(const PrototypeBank& bank) {
  const Index C = bank.size();
  MixtureParams p;
  p.pi = Eigen::VectorXd::Constant(C, 1.0 / static_cast<double>(C));
  p.mu = bank.as_double();
  p.sigma = Eigen::MatrixXd::Ones(C, bank.dim());
  return p;
}

namespace detail {

inline void check_shapes(Index d, const MixtureParams& params, const char* op) {
  if (params.dim() != d || params.pi.size() != params.components() ||
      params.sigma.rows() != params.components() || params.sigma.cols() != d)
    throw ValidationError(std::string(op) + ": feature dim " + std::to_string(d) +
                          " inconsistent with parameters");
}

// log pi_c + log N(z_n; mu_c, diag sigma_c), full normalising constant kept.
inline Eigen::MatrixXd log_joint(const Eigen::MatrixXd& x, const MixtureParams& params) {
  const Index N = x.rows(), C = params.components(), d = x.cols();
  Eigen::VectorXd log_norm(C);
  Eigen::MatrixXd inv_var = params.sigma.cwiseInverse();
  for (Index c = 0; c < C; ++c)
    log_norm(c) = std::log(params.pi(c)) -
                  0.5 * (static_cast<double>(d) * kLog2Pi + params.sigma.row(c).array().log().sum());
  Eigen::MatrixXd out(N, C);
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) {
      double quad = 0.0;
      for (Index k = 0; k < d; ++k) {
        const double diff = x(n, k) - params.mu(c, k);
        quad += diff * diff * inv_var(c, k);
      }
      out(n, c) = log_norm(c) - 0.5 * quad;
    }
  return out;
}

inline PosteriorMatrix e_step_impl(const Eigen::MatrixXd& x, const MixtureParams& params,
                                   bool log_space, Eigen::VectorXd* row_log_norm = nullptr) {
  const Eigen::MatrixXd lj = log_joint(x, params);
  PosteriorMatrix post{Eigen::MatrixXd(x.rows(), params.components())};
  if (row_log_norm) row_log_norm->resize(x.rows());
  for (Index n = 0; n < x.rows(); ++n) {
    if (log_space) {
      const double lse = log_sum_exp(lj.row(n));
      if (!std::isfinite(lse))
        throw NumericalError("e_step: non-finite density at row " + std::to_string(n));
      post.q.row(n) = (lj.row(n).array() - lse).exp();
      if (row_log_norm) (*row_log_norm)(n) = lse;
    } else {
      const Eigen::RowVectorXd dens = lj.row(n).array().exp();
      const double total = dens.sum();
      if (!(total > 0.0) || !std::isfinite(total))
        throw NumericalError("e_step: non-finite density at row " + std::to_string(n));
      post.q.row(n) = dens / total;
      if (row_log_norm) (*row_log_norm)(n) = std::log(total);
    }
  }
  return post;
}

inline MixtureParams m_step_impl(const Eigen::MatrixXd& x, const PosteriorMatrix& post,
                                 double var_floor, const MixtureParams* previous) {
  const Index N = x.rows(), C = post.q.cols(), d = x.cols();
  if (post.q.rows() != N) throw ValidationError("m_step: posterior rows != N");
  if (previous && (previous->components() != C || previous->dim() != d))
    throw ValidationError("m_step: previous parameters have the wrong shape");
  MixtureParams p;
  p.pi.resize(C);
  p.mu.resize(C, d);
  p.sigma.resize(C, d);
  for (Index c = 0; c < C; ++c) {
    double mass = 0.0;
    for (Index n = 0; n < N; ++n) mass += post.q(n, c);
    p.pi(c) = mass / static_cast<double>(N);
    if (mass < kDegenerateMass) {
      p.frozen.push_back(c);
      if (previous) {
        p.mu.row(c) = previous->mu.row(c);
        p.sigma.row(c) = previous->sigma.row(c).cwiseMax(var_floor);
      } else {
        p.mu.row(c) = x.colwise().mean();
        p.sigma.row(c) = ((x.rowwise() - p.mu.row(c)).array().square().colwise().mean())
                             .max(var_floor);
      }
      continue;
    }
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(d);
    for (Index n = 0; n < N; ++n) mean += post.q(n, c) * x.row(n);
    mean /= mass;
    // variance about the updated mean, biased (divide by the responsibility mass)
    Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(d);
    for (Index n = 0; n < N; ++n) var += post.q(n, c) * (x.row(n) - mean).array().square().matrix();
    var /= mass;
    p.mu.row(c) = mean;
    p.sigma.row(c) = var.cwiseMax(var_floor);
  }
  return p;
}

}  // namespace detail

/// Posterior responsibilities of each element under `params`.
template <typename Derived>
PosteriorMatrix e_step(const Eigen::MatrixBase<Derived>& features, const MixtureParams& params,
                       bool log_space = true) {
  detail::check_shapes(features.cols(), params, "e_step");
  return detail::e_step_impl(features.template cast<double>(), params, log_space);
}

/// Closed-form maximiser of the expected complete-data log-likelihood given `post`.
/// Components with total responsibility < kDegenerateMass keep `previous` mu/sigma
/// (or the unweighted element moments when no previous estimate is supplied).
template <typename Derived>
MixtureParams m_step(const Eigen::MatrixBase<Derived>& features, const PosteriorMatrix& post,
                     double var_floor = EmConfig{}.var_floor,
                     const MixtureParams* previous = nullptr) {
  if (!(var_floor > 0.0)) throw ValidationError("m_step: var_floor must be > 0");
  return detail::m_step_impl(features.template cast<double>(), post, var_floor, previous);
}

/// Σ_n log Σ_c pi_c N(z_n; mu_c, sigma_c).
template <typename Derived>
double log_likelihood(const Eigen::MatrixBase<Derived>& features, const MixtureParams& params) {
  detail::check_shapes(features.cols(), params, "log_likelihood");
  const Eigen::MatrixXd lj = detail::log_joint(features.template cast<double>(), params);
  double total = 0.0;
  for (Index n = 0; n < lj.rows(); ++n) total += detail::log_sum_exp(lj.row(n));
  return total;
}

struct SetFit {
  MixtureParams params;
  PosteriorMatrix posteriors;          // from the last E-step
  std::vector<double> log_likelihood;  // empty unless EmConfig::record_likelihood
};

/// EM from the prototype initialisation for cfg.num_steps (E, M) pairs.
template <typename Derived>
SetFit fit_set(const Eigen::MatrixBase<Derived>& features, const PrototypeBank& bank,
               const EmConfig& cfg = {}) {
  cfg.validate();
  if (features.rows() < 1) throw ValidationError("fit_set: empty set");
  if (features.cols() != bank.dim())
    throw ValidationError("fit_set: feature dim " + std::to_string(features.cols()) +
                          " != bank dim " + std::to_string(bank.dim()));
  const Eigen::MatrixXd x = features.template cast<double>();
  SetFit fit;
  fit.params = init_params(bank);
  Eigen::VectorXd row_lse;
  for (int t = 0; t < cfg.num_steps; ++t) {
    fit.posteriors = detail::e_step_impl(x, fit.params, cfg.log_space, &row_lse);
    if (cfg.record_likelihood) fit.log_likelihood.push_back(row_lse.sum());
    fit.params = detail::m_step_impl(x, fit.posteriors, cfg.var_floor, &fit.params);
  }
  if (cfg.record_likelihood) fit.log_likelihood.push_back(log_likelihood(x, fit.params));
  return fit;
}

}  // namespace pagg
