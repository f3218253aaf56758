#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Core>

namespace pagg::detail {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // ln(2π)

// log(sum(exp(v))) with max subtraction. Empty or all -inf input yields -inf.
template <typename Derived>
double log_sum_exp(const Eigen::DenseBase<Derived>& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v(i) - m);
  return m + std::log(s);
}

// Neumaier-compensated accumulator.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

// Column means of `rows` with compensated summation, in 64-bit.
template <typename Derived>
Eigen::VectorXd compensated_column_mean(const Eigen::MatrixBase<Derived>& rows) {
  const Eigen::Index n = rows.rows();
  const Eigen::Index d = rows.cols();
  Eigen::VectorXd out(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    CompensatedSum acc;
    for (Eigen::Index i = 0; i < n; ++i) acc.add(static_cast<double>(rows(i, k)));
    out(k) = acc.value() / static_cast<double>(n);
  }
  return out;
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (!std::isfinite(static_cast<double>(m(i, j)))) return false;
  return true;
}

template <typename Derived>
double squared_distance(const Eigen::MatrixBase<Derived>& a, Eigen::Index ia,
                        const Eigen::Ref<const Eigen::MatrixXd>& b, Eigen::Index ib) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < a.cols(); ++k) {
    const double diff = static_cast<double>(a(ia, k)) - b(ib, k);
    s += diff * diff;
  }
  return s;
}

}  // namespace pagg::detail
