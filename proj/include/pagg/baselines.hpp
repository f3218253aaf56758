#pragma once

#include <vector>

#include <Eigen/Core>

#include "pagg/detail/numeric.hpp"
#include "pagg/embedding.hpp"
#include "pagg/prototypes.hpp"

namespace pagg {

/// Mean of all elements (length d).
template <typename Derived>
SetEmbedding deepsets_embed(const Eigen::MatrixBase<Derived>& features) {
  if (features.rows() < 1) throw ValidationError("deepsets_embed: empty set");
  return SetEmbedding{detail::compensated_column_mean(features), Variant::deepsets, 0,
                      features.cols(), {}, {}, std::nullopt};
}

/// Hard-assignment histogram over prototypes; divided by N when `normalize`.
template <typename Derived>
SetEmbedding protocounts_embed(const Eigen::MatrixBase<Derived>& features,
                               const PrototypeBank& bank, bool normalize = true) {
  const auto labels = assign_nearest(bank, features);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(bank.size());
  for (Index l : labels) counts(l) += 1.0;
  if (normalize) counts /= static_cast<double>(features.rows());
  return SetEmbedding{std::move(counts), Variant::protocounts, bank.size(), bank.dim(),
                      {}, {}, std::nullopt};
}

/// Per-prototype mean of the hard-assigned elements, concatenated (C·d).
/// Prototypes with no elements contribute a zero block and are listed in `flagged`.
template <typename Derived>
SetEmbedding h2t_embed(const Eigen::MatrixBase<Derived>& features, const PrototypeBank& bank) {
  const auto labels = assign_nearest(bank, features);
  const Index C = bank.size(), d = bank.dim();
  SetEmbedding e{Eigen::VectorXd::Zero(C * d), Variant::h2t, C, d, {}, {}, std::nullopt};
  for (Index c = 0; c < C; ++c) {
    std::vector<Index> rows;
    for (std::size_t n = 0; n < labels.size(); ++n)
      if (labels[n] == c) rows.push_back(static_cast<Index>(n));
    if (rows.empty()) {
      e.flagged.push_back(c);
      continue;
    }
    Eigen::MatrixXd members(static_cast<Index>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i)
      members.row(static_cast<Index>(i)) = features.row(rows[i]).template cast<double>();
    e.values.segment(c * d, d) = detail::compensated_column_mean(members);
  }
  return e;
}

}  // namespace pagg
