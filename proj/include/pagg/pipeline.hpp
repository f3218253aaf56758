#pragma once

#include <algorithm>
#include <array>
#include <exception>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "pagg/baselines.hpp"
#include "pagg/embedding.hpp"
#include "pagg/mixture.hpp"
#include "pagg/sinkhorn.hpp"

namespace pagg {

enum class Method {
  panther_all,
  panther_wa,
  panther_top,
  panther_bottom,
  deepsets,
  protocounts,
  h2t,
  ot,
};

inline constexpr std::array<std::string_view, 8> kMethodNames = {
    "panther_all", "panther_wa", "panther_top", "panther_bottom",
    "deepsets",    "protocounts", "h2t",        "ot"};

inline std::string_view to_string(Method m) { return kMethodNames[static_cast<std::size_t>(m)]; }

inline std::optional<Method> method_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kMethodNames.size(); ++i)
    if (kMethodNames[i] == s) return static_cast<Method>(i);
  return std::nullopt;
}

inline Variant variant_of(Method m) {
  switch (m) {
    case Method::panther_all: return Variant::all;
    case Method::panther_wa: return Variant::wa;
    case Method::panther_top: return Variant::top;
    case Method::panther_bottom: return Variant::bottom;
    case Method::deepsets: return Variant::deepsets;
    case Method::protocounts: return Variant::protocounts;
    case Method::h2t: return Variant::h2t;
    case Method::ot: return Variant::ot;
  }
  throw ValidationError("bad method");
}

struct MethodConfig {
  EmConfig em;
  SinkhornConfig sinkhorn;
  bool protocounts_normalize = true;
  /// Treat a Sinkhorn run that hits max_iters as a per-set failure.
  bool require_ot_convergence = false;
  unsigned threads = 1;
  bool skip_errors = false;
};

/// A single set failed during embed_cohort.
class SetFailure : public Error {
 public:
  SetFailure(std::string set_id, const std::string& what)
      : Error("set '" + set_id + "': " + what), set_id_(std::move(set_id)) {}
  const std::string& set_id() const { return set_id_; }

 private:
  std::string set_id_;
};

template <typename Derived>
SetEmbedding embed_set(const Eigen::MatrixBase<Derived>& features, const PrototypeBank& bank,
                       Method method, const MethodConfig& cfg = {}) {
  switch (method) {
    case Method::panther_all:
    case Method::panther_wa:
    case Method::panther_top:
    case Method::panther_bottom: {
      const MixtureParams p = fit_set(features, bank, cfg.em).params;
      if (method == Method::panther_all) return compose_all(p);
      if (method == Method::panther_wa) return compose_wa(p);
      if (method == Method::panther_top) return compose_top(p);
      return compose_bottom(p);
    }
    case Method::deepsets: return deepsets_embed(features);
    case Method::protocounts: return protocounts_embed(features, bank, cfg.protocounts_normalize);
    case Method::h2t: return h2t_embed(features, bank);
    case Method::ot: {
      const TransportPlan plan = sinkhorn(features, bank, cfg.sinkhorn);
      if (cfg.require_ot_convergence && !plan.converged)
        throw NumericalError("sinkhorn did not converge (row residual " +
                             std::to_string(plan.row_residual) + ")");
      return ot_embedding(features, plan);
    }
  }
  throw ValidationError("bad method");
}

struct CohortEmbedding {
  std::vector<SetEmbedding> embeddings;  // cohort order, failed sets omitted
  std::vector<std::string> skipped;      // ids of failed sets (skip_errors only)
};

/// Embeds every set, in cohort order. Sets are processed on up to cfg.threads
/// threads; the result does not depend on the thread count. Fails fast with the
/// offending set id unless cfg.skip_errors.
inline CohortEmbedding embed_cohort(const Cohort& cohort, const PrototypeBank& bank, Method method,
                                    const MethodConfig& cfg = {}) {
  if (cohort.dim() != bank.dim())
    throw ValidationError("embed_cohort: cohort d=" + std::to_string(cohort.dim()) +
                          " but bank d=" + std::to_string(bank.dim()));
  cfg.em.validate();
  cfg.sinkhorn.validate();
  const std::size_t n = cohort.size();
  std::vector<std::optional<SetEmbedding>> results(n);
  std::vector<std::string> errors(n);

  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t j = begin; j < n; j += stride) {
      try {
        SetEmbedding e = embed_set(cohort[j].features(), bank, method, cfg);
        e.set_id = cohort[j].id();
        results[j] = std::move(e);
      } catch (const std::exception& ex) {
        errors[j] = ex.what();
        if (errors[j].empty()) errors[j] = "unknown error";
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(n)));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }

  CohortEmbedding out;
  for (std::size_t j = 0; j < n; ++j) {
    if (results[j]) {
      out.embeddings.push_back(std::move(*results[j]));
      continue;
    }
    if (!cfg.skip_errors) throw SetFailure(cohort[j].id(), errors[j]);
    out.skipped.push_back(cohort[j].id());
  }
  return out;
}

}  // namespace pagg
