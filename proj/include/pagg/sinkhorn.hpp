#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "pagg/detail/numeric.hpp"
#include "pagg/embedding.hpp"
#include "pagg/prototypes.hpp"

namespace pagg {

struct SinkhornConfig {
  /// Absolute regularisation. When unset, eps = eps_relative · median(cost).
  std::optional<double> eps;
  double eps_relative = 0.1;
  int max_iters = 200;
  double marginal_tol = 1e-6;

  void validate() const {
    if (eps && !(*eps > 0.0)) throw ValidationError("sinkhorn: eps must be > 0");
    if (!(eps_relative > 0.0)) throw ValidationError("sinkhorn: eps_relative must be > 0");
    if (max_iters < 1) throw ValidationError("sinkhorn: max_iters must be >= 1");
    if (!(marginal_tol > 0.0)) throw ValidationError("sinkhorn: marginal_tol must be > 0");
  }
};

/// Entropic coupling between N elements (mass 1/N each) and C prototypes (mass 1/C each).
struct TransportPlan {
  Eigen::MatrixXd plan;  // N×C
  double eps = 0.0;
  int iters_run = 0;
  bool converged = false;
  double row_residual = 0.0;  // max_n |Σ_c plan(n,c) − 1/N|
  double col_residual = 0.0;  // max_c |Σ_n plan(n,c) − 1/C|
};

/// Squared Euclidean cost between elements and prototypes.
template <typename Derived>
Eigen::MatrixXd squared_cost(const Eigen::MatrixBase<Derived>& features, const PrototypeBank& bank) {
  if (features.cols() != bank.dim()) throw ValidationError("sinkhorn: dimension mismatch");
  const Eigen::MatrixXd h = bank.as_double();
  Eigen::MatrixXd cost(features.rows(), h.rows());
  for (Index n = 0; n < features.rows(); ++n)
    for (Index c = 0; c < h.rows(); ++c) cost(n, c) = detail::squared_distance(features, n, h, c);
  return cost;
}

inline double median_of(const Eigen::MatrixXd& m) {
  std::vector<double> v(m.data(), m.data() + m.size());
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

/// Log-domain Sinkhorn on a precomputed cost matrix with uniform marginals.
inline TransportPlan sinkhorn_on_cost(const Eigen::MatrixXd& cost, const SinkhornConfig& cfg) {
  cfg.validate();
  const Index N = cost.rows(), C = cost.cols();
  if (N < 1 || C < 1) throw ValidationError("sinkhorn: empty problem");
  double eps = 0.0;
  if (cfg.eps) {
    eps = *cfg.eps;
  } else {
    double scale = median_of(cost);
    if (!(scale > 0.0)) scale = cost.mean();
    if (!(scale > 0.0)) scale = 1.0;
    eps = cfg.eps_relative * scale;
  }
  const double log_a = -std::log(static_cast<double>(N));
  const double log_b = -std::log(static_cast<double>(C));

  Eigen::VectorXd f = Eigen::VectorXd::Zero(N);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(C);
  Eigen::VectorXd scratch_c(C), scratch_n(N);
  TransportPlan out;
  out.eps = eps;
  out.plan.resize(N, C);

  auto build_plan = [&] {
    for (Index n = 0; n < N; ++n)
      for (Index c = 0; c < C; ++c) out.plan(n, c) = std::exp((f(n) + g(c) - cost(n, c)) / eps);
    out.row_residual =
        (out.plan.rowwise().sum().array() - 1.0 / static_cast<double>(N)).abs().maxCoeff();
    out.col_residual =
        (out.plan.colwise().sum().array() - 1.0 / static_cast<double>(C)).abs().maxCoeff();
  };

  for (int it = 0; it < cfg.max_iters; ++it) {
    for (Index n = 0; n < N; ++n) {
      for (Index c = 0; c < C; ++c) scratch_c(c) = (g(c) - cost(n, c)) / eps;
      f(n) = eps * (log_a - detail::log_sum_exp(scratch_c));
    }
    for (Index c = 0; c < C; ++c) {
      for (Index n = 0; n < N; ++n) scratch_n(n) = (f(n) - cost(n, c)) / eps;
      g(c) = eps * (log_b - detail::log_sum_exp(scratch_n));
    }
    out.iters_run = it + 1;
    build_plan();
    if (!detail::all_finite(out.plan)) throw NumericalError("sinkhorn: non-finite plan");
    if (out.row_residual < cfg.marginal_tol && out.col_residual < cfg.marginal_tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

/// Entropic OT of a set onto the prototype bank. A run that exhausts max_iters is
/// returned with converged == false and its residuals.
template <typename Derived>
TransportPlan sinkhorn(const Eigen::MatrixBase<Derived>& features, const PrototypeBank& bank,
                       const SinkhornConfig& cfg = {}) {
  if (features.rows() < 1) throw ValidationError("sinkhorn: empty set");
  return sinkhorn_on_cost(squared_cost(features, bank), cfg);
}

/// Per-prototype barycentre of the mass the plan sends to it, concatenated (C·d).
template <typename Derived>
SetEmbedding ot_embedding(const Eigen::MatrixBase<Derived>& features, const TransportPlan& plan) {
  if (plan.plan.rows() != features.rows())
    throw ValidationError("ot_embedding: plan rows != number of elements");
  const Index C = plan.plan.cols(), d = features.cols();
  const Eigen::MatrixXd x = features.template cast<double>();
  SetEmbedding e{Eigen::VectorXd(C * d), Variant::ot, C, d, {}, {}, std::nullopt};
  for (Index c = 0; c < C; ++c) {
    const double mass = plan.plan.col(c).sum();
    if (!(mass > 0.0)) throw NumericalError("ot_embedding: prototype " + std::to_string(c) +
                                            " receives no mass");
    e.values.segment(c * d, d) = (x.transpose() * plan.plan.col(c)) / mass;
  }
  return e;
}

}  // namespace pagg
