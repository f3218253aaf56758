#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pagg/set_data.hpp"

namespace pagg {

struct PlantedComponent {
  std::vector<double> mean;
  std::vector<double> variance;  // diagonal; scales the isotropic noise per dimension
};

/// Optional survival targets. Event time ~ Exp(base_hazard * exp(log_hazard[class])),
/// censoring time ~ Exp(censor_rate); observed time is the minimum.
struct SurvivalPlan {
  std::vector<double> log_hazard_per_class;
  double base_hazard = 0.1;
  double censor_rate = 0.02;
};

struct SyntheticSpec {
  std::size_t num_sets = 0;
  std::size_t d = 0;
  std::vector<PlantedComponent> true_components;
  std::vector<std::vector<double>> proportion_profiles;  // one per class
  std::size_t n_min = 1;
  std::size_t n_max = 1;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  bool with_coords = true;
  std::optional<SurvivalPlan> survival;
  std::string id_prefix = "set";

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw ValidationError("synthetic spec: " + field + ": " + why);
    };
    if (num_sets < 1) fail("num_sets", "must be >= 1");
    if (d < 1) fail("d", "must be >= 1");
    if (true_components.size() < 2) fail("true_components", "need K >= 2 components");
    for (const auto& c : true_components) {
      if (c.mean.size() != d) fail("true_components", "mean length differs from d");
      if (c.variance.size() != d) fail("true_components", "variance length differs from d");
      for (double v : c.mean)
        if (!std::isfinite(v)) fail("true_components", "non-finite mean");
      for (double v : c.variance)
        if (!(v > 0.0) || !std::isfinite(v)) fail("true_components", "variance must be positive");
    }
    if (proportion_profiles.empty()) fail("proportion_profiles", "need at least one profile");
    for (const auto& p : proportion_profiles) {
      if (p.size() != true_components.size())
        fail("proportion_profiles", "profile length differs from K");
      double s = 0.0;
      for (double v : p) {
        if (!(v >= 0.0)) fail("proportion_profiles", "entries must be non-negative");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-9) fail("proportion_profiles", "profile must sum to 1");
    }
    if (n_min < 1) fail("n_range", "min must be >= 1");
    if (n_max < n_min) fail("n_range", "max must be >= min");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
      fail("noise_sigma", "must be finite and >= 0");
    if (survival) {
      if (survival->log_hazard_per_class.size() != proportion_profiles.size())
        fail("survival", "one log hazard per class required");
      if (!(survival->base_hazard > 0.0)) fail("survival", "base_hazard must be positive");
      if (!(survival->censor_rate >= 0.0)) fail("survival", "censor_rate must be >= 0");
    }
  }
};

/// Generated cohort plus the planted component of every element (for verification).
struct SyntheticCohort {
  Cohort cohort;
  std::vector<std::vector<std::uint32_t>> component_ids;
};

inline SyntheticCohort generate_synthetic_cohort_with_truth(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> size_dist(spec.n_min, spec.n_max);
  const std::size_t num_classes = spec.proportion_profiles.size();

  std::vector<std::discrete_distribution<std::uint32_t>> pick;
  for (const auto& p : spec.proportion_profiles) pick.emplace_back(p.begin(), p.end());

  std::vector<EmbeddingSet> sets;
  std::vector<std::vector<std::uint32_t>> truth;
  sets.reserve(spec.num_sets);
  truth.reserve(spec.num_sets);
  const int width = static_cast<int>(std::to_string(spec.num_sets).size());

  for (std::size_t j = 0; j < spec.num_sets; ++j) {
    const auto cls = static_cast<std::uint32_t>(j % num_classes);
    const auto n = static_cast<Index>(size_dist(rng));
    FeatureMatrix features(n, static_cast<Index>(spec.d));
    std::vector<std::uint32_t> ids(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      const std::uint32_t k = pick[cls](rng);
      ids[static_cast<std::size_t>(i)] = k;
      const auto& comp = spec.true_components[k];
      for (std::size_t m = 0; m < spec.d; ++m) {
        const double noise = spec.noise_sigma == 0.0
                                 ? 0.0
                                 : spec.noise_sigma * std::sqrt(comp.variance[m]) * normal(rng);
        features(i, static_cast<Index>(m)) = static_cast<float>(comp.mean[m] + noise);
      }
    }

    std::optional<CoordMatrix> coords;
    if (spec.with_coords) {
      const auto side = static_cast<std::int32_t>(std::ceil(std::sqrt(static_cast<double>(n))));
      CoordMatrix c(n, 2);
      for (Index i = 0; i < n; ++i) {
        c(i, 0) = static_cast<std::int32_t>(i) % side;
        c(i, 1) = static_cast<std::int32_t>(i) / side;
      }
      coords = std::move(c);
    }

    Target target = Target::classification(cls);
    if (spec.survival) {
      const auto& sv = *spec.survival;
      const double rate = sv.base_hazard * std::exp(sv.log_hazard_per_class[cls]);
      std::exponential_distribution<double> event_time(rate);
      double t = event_time(rng);
      bool event = true;
      if (sv.censor_rate > 0.0) {
        std::exponential_distribution<double> censor_time(sv.censor_rate);
        const double c = censor_time(rng);
        if (c < t) {
          t = c;
          event = false;
        }
      }
      target = Target::survival(std::max(t, 1e-6), event);
    }

    std::string id = std::to_string(j);
    id.insert(0, static_cast<std::size_t>(width) - id.size(), '0');
    sets.emplace_back(spec.id_prefix + id, std::move(features), std::move(coords), target);
    truth.push_back(std::move(ids));
  }

  std::optional<std::uint32_t> num_classes_field;
  if (!spec.survival) num_classes_field = static_cast<std::uint32_t>(num_classes);
  return {Cohort(std::move(sets), num_classes_field), std::move(truth)};
}

/// Deterministic for a fixed spec: same spec, same cohort.
inline Cohort generate_synthetic_cohort(const SyntheticSpec& spec) {
  return generate_synthetic_cohort_with_truth(spec).cohort;
}

/// Options for drawing a random planted mixture (used by the CLI).
struct RandomMixtureOptions {
  std::size_t components = 3;
  std::size_t d = 8;
  std::size_t classes = 2;
  double mean_spread = 3.0;
  double profile_concentration = 1.0;  // larger -> profiles further from uniform
  std::uint64_t seed = 0;
};

/// Draws planted means ~ N(0, spread²) with unit variances and per-class profiles
/// proportional to exp(concentration · g), g ~ N(0, 1). Fills the component and profile
/// fields of `spec`; other fields are left as given.
inline void plant_random_mixture(SyntheticSpec& spec, const RandomMixtureOptions& opt) {
  std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  spec.d = opt.d;
  spec.true_components.clear();
  for (std::size_t k = 0; k < opt.components; ++k) {
    PlantedComponent c;
    for (std::size_t m = 0; m < opt.d; ++m) c.mean.push_back(opt.mean_spread * normal(rng));
    c.variance.assign(opt.d, 1.0);
    spec.true_components.push_back(std::move(c));
  }
  spec.proportion_profiles.clear();
  for (std::size_t p = 0; p < opt.classes; ++p) {
    std::vector<double> w(opt.components);
    double s = 0.0;
    for (auto& v : w) {
      v = std::exp(opt.profile_concentration * normal(rng));
      s += v;
    }
    for (auto& v : w) v /= s;
    // exact renormalisation so the sum check holds to 1e-9
    double r = 0.0;
    for (std::size_t k = 0; k + 1 < w.size(); ++k) r += w[k];
    w.back() = 1.0 - r;
    spec.proportion_profiles.push_back(std::move(w));
  }
}

}  // namespace pagg
