#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pagg/error.hpp"

namespace pagg {

namespace detail {
inline void check_labels(std::span<const int> preds, std::span<const int> labels, int K,
                         const char* op) {
  if (preds.empty()) throw ValidationError(std::string(op) + ": empty input");
  if (preds.size() != labels.size())
    throw ValidationError(std::string(op) + ": preds and labels differ in length");
  if (K < 1) throw ValidationError(std::string(op) + ": K must be >= 1");
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] < 0 || preds[i] >= K || labels[i] < 0 || labels[i] >= K)
      throw ValidationError(std::string(op) + ": class index out of range at " +
                            std::to_string(i));
}

// counts[label][pred]
inline std::vector<std::vector<double>> confusion(std::span<const int> preds,
                                                  std::span<const int> labels, int K) {
  std::vector<std::vector<double>> m(static_cast<std::size_t>(K),
                                     std::vector<double>(static_cast<std::size_t>(K), 0.0));
  for (std::size_t i = 0; i < preds.size(); ++i)
    m[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])] += 1.0;
  return m;
}
}  // namespace detail

struct ClassStats {
  int label = 0;
  std::int64_t support = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline std::vector<ClassStats> per_class_stats(std::span<const int> preds,
                                               std::span<const int> labels, int K) {
  detail::check_labels(preds, labels, K, "per_class_stats");
  const auto m = detail::confusion(preds, labels, K);
  std::vector<ClassStats> out;
  for (int k = 0; k < K; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    double tp = m[kk][kk], row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < m.size(); ++j) {
      row += m[kk][j];
      col += m[j][kk];
    }
    ClassStats s;
    s.label = k;
    s.support = static_cast<std::int64_t>(row);
    s.precision = col > 0.0 ? tp / col : 0.0;
    s.recall = row > 0.0 ? tp / row : 0.0;
    const double denom = 2.0 * tp + (col - tp) + (row - tp);
    s.f1 = denom > 0.0 ? 2.0 * tp / denom : 0.0;
    out.push_back(s);
  }
  return out;
}

/// Mean recall over the classes present in `labels`.
inline double balanced_accuracy(std::span<const int> preds, std::span<const int> labels, int K) {
  const auto stats = per_class_stats(preds, labels, K);
  double sum = 0.0;
  int present = 0;
  for (const auto& s : stats)
    if (s.support > 0) {
      sum += s.recall;
      ++present;
    }
  return sum / present;
}

/// Support-weighted mean of per-class F1.
inline double weighted_f1(std::span<const int> preds, std::span<const int> labels, int K) {
  const auto stats = per_class_stats(preds, labels, K);
  double sum = 0.0;
  for (const auto& s : stats) sum += static_cast<double>(s.support) * s.f1;
  return sum / static_cast<double>(labels.size());
}

struct KappaResult {
  double value = 0.0;
  bool degenerate = false;  // zero expected disagreement; value reported as 0
};

/// Cohen's kappa with quadratic weights (i − j)² / (K − 1)².
inline KappaResult cohen_kappa_quadratic(std::span<const int> preds, std::span<const int> labels,
                                         int K) {
  detail::check_labels(preds, labels, K, "cohen_kappa_quadratic");
  if (K < 2) throw ValidationError("cohen_kappa_quadratic: K must be >= 2");
  const auto O = detail::confusion(preds, labels, K);
  const auto uK = static_cast<std::size_t>(K);
  std::vector<double> row(uK, 0.0), col(uK, 0.0);
  double n = 0.0;
  for (std::size_t i = 0; i < uK; ++i)
    for (std::size_t j = 0; j < uK; ++j) {
      row[i] += O[i][j];
      col[j] += O[i][j];
      n += O[i][j];
    }
  const double scale = static_cast<double>((K - 1) * (K - 1));
  double observed = 0.0, expected = 0.0;
  for (std::size_t i = 0; i < uK; ++i)
    for (std::size_t j = 0; j < uK; ++j) {
      const double diff = static_cast<double>(i) - static_cast<double>(j);
      const double w = diff * diff / scale;
      observed += w * O[i][j];
      expected += w * row[i] * col[j] / n;
    }
  if (expected == 0.0) return {0.0, true};
  return {1.0 - observed / expected, false};
}

struct ConcordanceResult {
  double value = 0.0;
  std::int64_t comparable_pairs = 0;
};

/// Harrell's c-index: pairs with t_i < t_j and an event at t_i; higher risk at i counts
/// as concordant, equal risks as one half.
inline ConcordanceResult concordance_index(std::span<const double> risks,
                                           std::span<const double> times,
                                           const std::vector<bool>& events) {
  const std::size_t n = risks.size();
  if (times.size() != n || events.size() != n)
    throw ValidationError("concordance_index: inputs differ in length");
  if (n < 2) throw ValidationError("concordance_index: need at least 2 subjects");
  double score = 0.0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!events[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (!(times[i] < times[j])) continue;
      ++pairs;
      if (risks[i] > risks[j])
        score += 1.0;
      else if (risks[i] == risks[j])
        score += 0.5;
    }
  }
  if (pairs == 0) throw ValidationError("concordance_index: no comparable pairs");
  return {score / static_cast<double>(pairs), pairs};
}

/// Named metric values plus breakdowns; keys serialise in sorted order.
struct EvalReport {
  std::map<std::string, double> metrics;
  std::vector<ClassStats> per_class;
  std::optional<std::int64_t> n_comparable_pairs;
  std::vector<std::string> flags;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    nlohmann::ordered_json m = nlohmann::ordered_json::object();
    for (const auto& [k, v] : metrics) m[k] = v;
    j["metrics"] = m;
    if (!per_class.empty()) {
      nlohmann::ordered_json pc = nlohmann::ordered_json::array();
      for (const auto& s : per_class)
        pc.push_back({{"label", s.label},
                      {"support", s.support},
                      {"precision", s.precision},
                      {"recall", s.recall},
                      {"f1", s.f1}});
      j["per_class"] = pc;
    }
    if (n_comparable_pairs) j["n_comparable_pairs"] = *n_comparable_pairs;
    j["flags"] = flags;
    return j;
  }

  /// Two lines: header of metric names, then values.
  std::string to_csv() const {
    std::ostringstream head, vals;
    bool first = true;
    for (const auto& [k, v] : metrics) {
      head << (first ? "" : ",") << k;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      vals << (first ? "" : ",") << buf;
      first = false;
    }
    if (n_comparable_pairs) {
      head << (first ? "" : ",") << "n_comparable_pairs";
      vals << (first ? "" : ",") << *n_comparable_pairs;
    }
    return head.str() + "\n" + vals.str() + "\n";
  }
};

inline EvalReport classification_report(std::span<const int> preds, std::span<const int> labels,
                                        int K) {
  EvalReport r;
  r.metrics["balanced_accuracy"] = balanced_accuracy(preds, labels, K);
  r.metrics["weighted_f1"] = weighted_f1(preds, labels, K);
  if (K >= 2) {
    const auto kappa = cohen_kappa_quadratic(preds, labels, K);
    r.metrics["kappa_quadratic"] = kappa.value;
    if (kappa.degenerate) r.flags.push_back("kappa_degenerate");
  }
  r.per_class = per_class_stats(preds, labels, K);
  return r;
}

inline EvalReport survival_report(std::span<const double> risks, std::span<const double> times,
                                  const std::vector<bool>& events) {
  EvalReport r;
  const auto ci = concordance_index(risks, times, events);
  r.metrics["c_index"] = ci.value;
  r.n_comparable_pairs = ci.comparable_pairs;
  return r;
}

}  // namespace pagg
