#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "pagg/detail/binary_io.hpp"
#include "pagg/detail/numeric.hpp"
#include "pagg/set_data.hpp"

namespace pagg {

enum class KMeansInit { kmeanspp, random_rows };

struct KMeansConfig {
  Index C = 16;
  int max_iters = 100;
  double tol = 1e-4;  // max centroid shift (Euclidean, feature units)
  std::uint64_t seed = 0;
  KMeansInit init = KMeansInit::kmeanspp;
  Index max_pooled = 0;  // 0 = use every pooled element

  void validate() const {
    if (C < 1) throw ValidationError("kmeans: C must be >= 1");
    if (max_iters < 1) throw ValidationError("kmeans: max_iters must be >= 1");
    if (!(tol > 0.0)) throw ValidationError("kmeans: tol must be > 0");
    if (max_pooled < 0) throw ValidationError("kmeans: max_pooled must be >= 0");
  }
};

struct KMeansMeta {
  int iterations_run = 0;
  double final_inertia = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> inertia_history;  // one entry per assignment pass

  bool operator==(const KMeansMeta&) const = default;
};

/// C shared prototype vectors (C×d). Rows are finite and pairwise distinct.
class PrototypeBank {
 public:
  explicit PrototypeBank(FeatureMatrix prototypes, KMeansMeta meta = {})
      : prototypes_(std::move(prototypes)), meta_(std::move(meta)) {
    if (prototypes_.rows() < 1 || prototypes_.cols() < 1)
      throw ValidationError("prototype bank: need C >= 1 and d >= 1");
    if (!detail::all_finite(prototypes_))
      throw ValidationError("prototype bank: non-finite prototype");
    for (Index a = 0; a < prototypes_.rows(); ++a)
      for (Index b = a + 1; b < prototypes_.rows(); ++b)
        if (prototypes_.row(a) == prototypes_.row(b))
          throw ValidationError("prototype bank: rows " + std::to_string(a) + " and " +
                                std::to_string(b) + " are identical");
  }

  const FeatureMatrix& prototypes() const { return prototypes_; }
  Index size() const { return prototypes_.rows(); }
  Index dim() const { return prototypes_.cols(); }
  const KMeansMeta& meta() const { return meta_; }

  Eigen::MatrixXd as_double() const { return prototypes_.cast<double>(); }

  /// Bank with rows reordered so that new row c is old row order[c].
  PrototypeBank permuted(const std::vector<Index>& order) const {
    FeatureMatrix p(prototypes_.rows(), prototypes_.cols());
    for (Index c = 0; c < p.rows(); ++c) p.row(c) = prototypes_.row(order[static_cast<std::size_t>(c)]);
    return PrototypeBank(std::move(p), meta_);
  }

  bool operator==(const PrototypeBank& o) const {
    return prototypes_.rows() == o.prototypes_.rows() &&
           prototypes_.cols() == o.prototypes_.cols() && prototypes_ == o.prototypes_ &&
           meta_ == o.meta_;
  }

 private:
  FeatureMatrix prototypes_;
  KMeansMeta meta_;
};

/// Index of the nearest prototype for every row; ties go to the lowest index.
template <typename Derived>
std::vector<Index> assign_nearest(const PrototypeBank& bank,
                                  const Eigen::MatrixBase<Derived>& features) {
  if (features.cols() != bank.dim())
    throw ValidationError("assign_nearest: feature dim " + std::to_string(features.cols()) +
                          " != bank dim " + std::to_string(bank.dim()));
  const Eigen::MatrixXd h = bank.as_double();
  std::vector<Index> labels(static_cast<std::size_t>(features.rows()));
  for (Index n = 0; n < features.rows(); ++n) {
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index c = 0; c < h.rows(); ++c) {
      const double dist = detail::squared_distance(features, n, h, c);
      if (dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    labels[static_cast<std::size_t>(n)] = best;
  }
  return labels;
}

namespace detail {

// Rows of `x` sorted lexicographically; makes the fit independent of pooling order.
inline Eigen::MatrixXd sorted_rows(const Eigen::MatrixXd& x) {
  std::vector<Index> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    for (Index k = 0; k < x.cols(); ++k) {
      if (x(a, k) < x(b, k)) return true;
      if (x(b, k) < x(a, k)) return false;
    }
    return false;
  });
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) out.row(i) = x.row(order[static_cast<std::size_t>(i)]);
  return out;
}

inline Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& x, Index C, std::mt19937_64& rng) {
  const Index P = x.rows();
  Eigen::MatrixXd centers(C, x.cols());
  std::uniform_int_distribution<Index> first(0, P - 1);
  centers.row(0) = x.row(first(rng));
  std::vector<double> d2(static_cast<std::size_t>(P));
  for (Index i = 0; i < P; ++i) d2[static_cast<std::size_t>(i)] = squared_distance(x, i, centers, 0);
  for (Index c = 1; c < C; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    if (!(total > 0.0))
      throw ConfigError("kmeans: fewer distinct pooled points than C=" + std::to_string(C));
    std::discrete_distribution<Index> pick(d2.begin(), d2.end());
    centers.row(c) = x.row(pick(rng));
    for (Index i = 0; i < P; ++i)
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], squared_distance(x, i, centers, c));
  }
  return centers;
}

inline Eigen::MatrixXd random_rows_init(const Eigen::MatrixXd& x, Index C, std::mt19937_64& rng) {
  std::vector<Index> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  Eigen::MatrixXd centers(C, x.cols());
  Index filled = 0;
  for (Index i : order) {
    bool dup = false;
    for (Index c = 0; c < filled && !dup; ++c) dup = centers.row(c) == x.row(i);
    if (dup) continue;
    centers.row(filled++) = x.row(i);
    if (filled == C) return centers;
  }
  throw ConfigError("kmeans: fewer distinct pooled points than C=" + std::to_string(C));
}

// One assignment pass; returns inertia and fills labels/distances.
inline double assign_pass(const Eigen::MatrixXd& x, const Eigen::MatrixXd& centers,
                          std::vector<Index>& labels, std::vector<double>& dist) {
  double inertia = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index c = 0; c < centers.rows(); ++c) {
      const double dd = squared_distance(x, i, centers, c);
      if (dd < best_d) {
        best_d = dd;
        best = c;
      }
    }
    labels[static_cast<std::size_t>(i)] = best;
    dist[static_cast<std::size_t>(i)] = best_d;
    inertia += best_d;
  }
  return inertia;
}

}  // namespace detail

/// Lloyd's algorithm on a pooled element matrix (rows = points).
inline PrototypeBank fit_prototypes(const Eigen::MatrixXd& pooled, const KMeansConfig& cfg) {
  cfg.validate();
  if (pooled.rows() < cfg.C)
    throw ConfigError("kmeans: " + std::to_string(pooled.rows()) +
                      " pooled elements is fewer than C=" + std::to_string(cfg.C));
  std::mt19937_64 rng(cfg.seed);
  Eigen::MatrixXd x = detail::sorted_rows(pooled);
  if (cfg.max_pooled > 0 && x.rows() > cfg.max_pooled) {
    std::vector<Index> idx(static_cast<std::size_t>(x.rows()));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(cfg.max_pooled));
    std::sort(idx.begin(), idx.end());
    Eigen::MatrixXd sub(cfg.max_pooled, x.cols());
    for (Index i = 0; i < sub.rows(); ++i) sub.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
    x = std::move(sub);
    if (x.rows() < cfg.C) throw ConfigError("kmeans: max_pooled is fewer than C");
  }

  Eigen::MatrixXd centers = cfg.init == KMeansInit::kmeanspp
                                ? detail::kmeanspp_init(x, cfg.C, rng)
                                : detail::random_rows_init(x, cfg.C, rng);

  const auto P = static_cast<std::size_t>(x.rows());
  std::vector<Index> labels(P);
  std::vector<double> dist(P);
  KMeansMeta meta;
  meta.seed = cfg.seed;

  for (int it = 0; it < cfg.max_iters; ++it) {
    meta.inertia_history.push_back(detail::assign_pass(x, centers, labels, dist));

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(cfg.C, x.cols());
    std::vector<Index> counts(static_cast<std::size_t>(cfg.C), 0);
    for (std::size_t i = 0; i < P; ++i) {
      sums.row(labels[i]) += x.row(static_cast<Index>(i));
      ++counts[static_cast<std::size_t>(labels[i])];
    }
    Eigen::MatrixXd next = centers;
    std::vector<bool> used(P, false);
    for (Index c = 0; c < cfg.C; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        next.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // empty cluster: move to the point farthest from its current centroid
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < P; ++i)
        if (!used[i] && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      used[far] = true;
      next.row(c) = x.row(static_cast<Index>(far));
    }
    const double shift = (next - centers).rowwise().norm().maxCoeff();
    centers = std::move(next);
    meta.iterations_run = it + 1;
    if (shift < cfg.tol) break;
  }
  meta.final_inertia = detail::assign_pass(x, centers, labels, dist);
  meta.inertia_history.push_back(meta.final_inertia);

  FeatureMatrix protos = centers.cast<float>();
  try {
    return PrototypeBank(std::move(protos), std::move(meta));
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("kmeans: degenerate result: ") + e.what());
  }
}

/// Pools every element of every set (no subsampling unless cfg.max_pooled is set).
inline PrototypeBank fit_prototypes(const Cohort& cohort, const KMeansConfig& cfg) {
  Eigen::MatrixXd pooled(cohort.total_elements(), cohort.dim());
  Index row = 0;
  for (const auto& s : cohort.sets()) {
    pooled.middleRows(row, s.size()) = s.features().cast<double>();
    row += s.size();
  }
  return fit_prototypes(pooled, cfg);
}

namespace detail {
inline constexpr std::string_view kBankMagic = "PBNK";
inline constexpr std::uint16_t kBankVersion = 1;
}  // namespace detail

inline nlohmann::ordered_json bank_meta_json(const KMeansMeta& m) {
  nlohmann::ordered_json j;
  j["iterations_run"] = m.iterations_run;
  j["final_inertia"] = m.final_inertia;
  j["seed"] = m.seed;
  j["inertia_history"] = m.inertia_history;
  return j;
}

/// "PBNK" | version u16 | C u32 | d u32 | C×d f32 | meta JSON length u32 | meta JSON.
inline std::vector<std::uint8_t> encode_bank(const PrototypeBank& bank) {
  detail::ByteWriter w;
  w.put_magic(detail::kBankMagic);
  w.put<std::uint16_t>(detail::kBankVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(bank.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(bank.dim()));
  for (Index c = 0; c < bank.size(); ++c)
    for (Index k = 0; k < bank.dim(); ++k) w.put<float>(bank.prototypes()(c, k));
  const std::string meta = bank_meta_json(bank.meta()).dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
  w.put_bytes(meta);
  return w.bytes();
}

inline PrototypeBank decode_bank(std::span<const std::uint8_t> bytes, const std::string& what) {
  detail::ByteReader r(bytes, what);
  r.expect_magic(detail::kBankMagic);
  if (r.get<std::uint16_t>() != detail::kBankVersion)
    throw ParseError(what + ": unsupported bank version");
  const auto C = r.get<std::uint32_t>();
  const auto d = r.get<std::uint32_t>();
  FeatureMatrix p(C, d);
  for (std::uint32_t c = 0; c < C; ++c)
    for (std::uint32_t k = 0; k < d; ++k) p(c, k) = r.get<float>();
  const auto len = r.get<std::uint32_t>();
  KMeansMeta meta;
  try {
    const auto j = nlohmann::json::parse(r.get_string(len));
    meta.iterations_run = j.at("iterations_run").get<int>();
    meta.final_inertia = j.at("final_inertia").get<double>();
    meta.seed = j.at("seed").get<std::uint64_t>();
    meta.inertia_history = j.value("inertia_history", std::vector<double>{});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(what + ": bad bank metadata: " + e.what());
  }
  if (r.remaining() != 0) throw ParseError(what + ": trailing bytes");
  try {
    return PrototypeBank(std::move(p), std::move(meta));
  } catch (const ValidationError& e) {
    throw ParseError(what + ": " + e.what());
  }
}

inline void save_bank(const PrototypeBank& bank, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_bank(bank));
}

inline PrototypeBank load_bank(const std::filesystem::path& path) {
  return decode_bank(detail::read_file_bytes(path), path.string());
}

}  // namespace pagg
