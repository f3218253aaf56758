#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pagg/cohort_io.hpp"
#include "pagg/detail/binary_io.hpp"
#include "pagg/mixture.hpp"

namespace pagg {

/// Per-element argmax prototype and posterior row, plus the set's mixture weights.
struct AssignmentMap {
  std::string set_id;
  std::optional<CoordMatrix> coords;
  std::vector<Index> assigned;  // argmax of each q row, lowest index on ties
  Eigen::MatrixXd q;            // N×C
  Eigen::VectorXd pi_hat;

  Index size() const { return q.rows(); }
  Index components() const { return q.cols(); }
};

inline AssignmentMap assignment_map(Index num_elements, const PosteriorMatrix& post,
                                    const MixtureParams& params,
                                    const std::optional<CoordMatrix>& coords = std::nullopt,
                                    std::string set_id = {}) {
  if (post.q.rows() != num_elements)
    throw ValidationError("assignment_map: posterior rows != number of elements");
  if (post.q.cols() != params.components())
    throw ValidationError("assignment_map: posterior columns != number of components");
  if (coords && coords->rows() != num_elements)
    throw ValidationError("assignment_map: coords rows != number of elements");
  AssignmentMap m;
  m.set_id = std::move(set_id);
  m.coords = coords;
  m.q = post.q;
  m.pi_hat = params.pi;
  m.assigned.resize(static_cast<std::size_t>(num_elements));
  for (Index n = 0; n < num_elements; ++n) {
    Index best = 0;
    for (Index c = 1; c < post.q.cols(); ++c)
      if (post.q(n, c) > post.q(n, best)) best = c;
    m.assigned[static_cast<std::size_t>(n)] = best;
  }
  return m;
}

template <typename Derived>
AssignmentMap assignment_map(const Eigen::MatrixBase<Derived>& features, const PosteriorMatrix& post,
                             const MixtureParams& params,
                             const std::optional<CoordMatrix>& coords = std::nullopt,
                             std::string set_id = {}) {
  if (features.cols() != params.dim()) throw ValidationError("assignment_map: dimension mismatch");
  return assignment_map(features.rows(), post, params, coords, std::move(set_id));
}

/// Posterior of every element for prototype c_star.
inline Eigen::VectorXd prototype_heatmap(const PosteriorMatrix& post, Index c_star) {
  if (c_star < 0 || c_star >= post.q.cols())
    throw ValidationError("prototype_heatmap: prototype index " + std::to_string(c_star) +
                          " out of range");
  return post.q.col(c_star);
}

/// Per-set mixture weights plus per-label mean rows.
struct PiTable {
  std::vector<std::string> set_ids;
  Eigen::MatrixXd rows;  // one pi_hat per set
  std::map<std::int64_t, Eigen::VectorXd> label_means;

  std::string to_csv() const {
    std::ostringstream out;
    out << "id";
    for (Index c = 0; c < rows.cols(); ++c) out << ",pi" << c;
    out << '\n';
    auto put_row = [&](const std::string& id, const Eigen::VectorXd& r) {
      out << id;
      for (Index c = 0; c < r.size(); ++c) out << ',' << detail::format_g9(r(c));
      out << '\n';
    };
    for (Index i = 0; i < rows.rows(); ++i) put_row(set_ids[static_cast<std::size_t>(i)], rows.row(i).transpose());
    for (const auto& [label, mean] : label_means) put_row("label_mean:" + std::to_string(label), mean);
    return out.str();
  }
};

inline PiTable cohort_pi_table(const std::vector<AssignmentMap>& maps,
                               const std::optional<std::vector<std::int64_t>>& labels = std::nullopt) {
  if (maps.empty()) throw ValidationError("cohort_pi_table: no maps");
  if (labels && labels->size() != maps.size())
    throw ValidationError("cohort_pi_table: labels misaligned with maps");
  const Index C = maps.front().pi_hat.size();
  PiTable t;
  t.rows.resize(static_cast<Index>(maps.size()), C);
  std::map<std::int64_t, std::pair<Eigen::VectorXd, int>> acc;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].pi_hat.size() != C) throw ValidationError("cohort_pi_table: maps disagree on C");
    t.set_ids.push_back(maps[i].set_id);
    t.rows.row(static_cast<Index>(i)) = maps[i].pi_hat.transpose();
    if (labels) {
      auto [it, fresh] = acc.try_emplace((*labels)[i], Eigen::VectorXd::Zero(C), 0);
      it->second.first += maps[i].pi_hat;
      it->second.second += 1;
    }
  }
  for (auto& [label, sum_count] : acc)
    t.label_means[label] = sum_count.first / static_cast<double>(sum_count.second);
  return t;
}

/// `x,y,assigned,q0,…,q{C-1}`; x,y empty when the set has no coordinates.
inline std::string assignment_csv(const AssignmentMap& m) {
  std::ostringstream out;
  out << "x,y,assigned";
  for (Index c = 0; c < m.components(); ++c) out << ",q" << c;
  out << '\n';
  for (Index n = 0; n < m.size(); ++n) {
    if (m.coords)
      out << (*m.coords)(n, 0) << ',' << (*m.coords)(n, 1);
    else
      out << ',';
    out << ',' << m.assigned[static_cast<std::size_t>(n)];
    for (Index c = 0; c < m.components(); ++c) out << ',' << detail::format_g9(m.q(n, c));
    out << '\n';
  }
  return out.str();
}

/// Dense raster over the coordinate bounding box (rows = y, cols = x).
struct Raster {
  std::int32_t x0 = 0;
  std::int32_t y0 = 0;
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values;
};

namespace detail {
inline Raster empty_raster(const CoordMatrix& coords, float fill) {
  if (coords.rows() == 0) throw ValidationError("raster: no coordinates");
  Raster r;
  r.x0 = coords.col(0).minCoeff();
  r.y0 = coords.col(1).minCoeff();
  const Index w = coords.col(0).maxCoeff() - r.x0 + 1;
  const Index h = coords.col(1).maxCoeff() - r.y0 + 1;
  r.values.setConstant(h, w, fill);
  return r;
}
}  // namespace detail

/// assigned prototype per grid cell, −1 for cells with no element.
inline Raster assignment_raster(const AssignmentMap& m) {
  if (!m.coords) throw ValidationError("assignment_raster: set has no coordinates");
  Raster r = detail::empty_raster(*m.coords, -1.0f);
  for (Index n = 0; n < m.size(); ++n)
    r.values((*m.coords)(n, 1) - r.y0, (*m.coords)(n, 0) - r.x0) =
        static_cast<float>(m.assigned[static_cast<std::size_t>(n)]);
  return r;
}

/// q(c_star | z) per grid cell, 0 for holes.
inline Raster posterior_raster(const AssignmentMap& m, Index c_star) {
  if (!m.coords) throw ValidationError("posterior_raster: set has no coordinates");
  const Eigen::VectorXd col = prototype_heatmap(PosteriorMatrix{m.q}, c_star);
  Raster r = detail::empty_raster(*m.coords, 0.0f);
  for (Index n = 0; n < m.size(); ++n)
    r.values((*m.coords)(n, 1) - r.y0, (*m.coords)(n, 0) - r.x0) = static_cast<float>(col(n));
  return r;
}

/// Binary PGM (P5). Values in [lo, hi] map linearly to 0..255; values below lo map to 0.
inline std::vector<std::uint8_t> encode_pgm(const Raster& r, float lo, float hi) {
  std::ostringstream head;
  head << "P5\n" << r.values.cols() << ' ' << r.values.rows() << "\n255\n";
  const std::string h = head.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  const float span = hi > lo ? hi - lo : 1.0f;
  for (Index i = 0; i < r.values.rows(); ++i)
    for (Index j = 0; j < r.values.cols(); ++j) {
      const float v = std::clamp((r.values(i, j) - lo) / span, 0.0f, 1.0f);
      out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
    }
  return out;
}

/// Raw matrix: rows u32 | cols u32 | rows·cols f32 (row-major, little-endian).
inline std::vector<std::uint8_t> encode_raw_f32(const Raster& r) {
  detail::ByteWriter w;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(r.values.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(r.values.cols()));
  for (Index i = 0; i < r.values.rows(); ++i)
    for (Index j = 0; j < r.values.cols(); ++j) w.put<float>(r.values(i, j));
  return w.bytes();
}

}  // namespace pagg
