#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pagg/detail/numeric.hpp"
#include "pagg/error.hpp"

namespace pagg {

using Index = Eigen::Index;

/// Feature storage: N×d, row-major, 32-bit.
using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Optional per-element grid position (x, y).
using CoordMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, 2, Eigen::RowMajor>;

enum class TargetKind : std::uint8_t { class_label, survival };

struct Target {
  TargetKind kind = TargetKind::class_label;
  std::optional<std::uint32_t> class_label;
  std::optional<double> time;
  std::optional<bool> event;

  static Target classification(std::uint32_t label) {
    return Target{TargetKind::class_label, label, std::nullopt, std::nullopt};
  }

  static Target survival(double time, bool event) {
    Target t{TargetKind::survival, std::nullopt, time, event};
    t.validate();
    return t;
  }

  void validate() const {
    if (kind == TargetKind::class_label) {
      if (!class_label || time || event)
        throw ValidationError("target: class_label kind requires label only");
    } else {
      if (!time || !event || class_label)
        throw ValidationError("target: survival kind requires time and event only");
      if (!(*time > 0.0) || !std::isfinite(*time))
        throw ValidationError("target.time: must be positive and finite");
    }
  }

  bool operator==(const Target&) const = default;
};

/// One bag of N feature vectors. Immutable after construction.
class EmbeddingSet {
 public:
  EmbeddingSet(std::string id, FeatureMatrix features,
               std::optional<CoordMatrix> coords = std::nullopt,
               std::optional<Target> target = std::nullopt)
      : id_(std::move(id)),
        features_(std::move(features)),
        coords_(std::move(coords)),
        target_(std::move(target)) {
    validate();
  }

  const std::string& id() const { return id_; }
  const FeatureMatrix& features() const { return features_; }
  const std::optional<CoordMatrix>& coords() const { return coords_; }
  const std::optional<Target>& target() const { return target_; }
  Index size() const { return features_.rows(); }
  Index dim() const { return features_.cols(); }

  bool operator==(const EmbeddingSet& other) const {
    if (id_ != other.id_ || target_ != other.target_) return false;
    if (features_.rows() != other.features_.rows() ||
        features_.cols() != other.features_.cols())
      return false;
    if (features_ != other.features_) return false;
    if (coords_.has_value() != other.coords_.has_value()) return false;
    return !coords_ || *coords_ == *other.coords_;
  }

 private:
  void validate() const {
    if (features_.rows() < 1 || features_.cols() < 1)
      throw ValidationError("set '" + id_ + "': features must have N >= 1 and d >= 1");
    for (Index i = 0; i < features_.rows(); ++i)
      for (Index k = 0; k < features_.cols(); ++k)
        if (!std::isfinite(features_(i, k)))
          throw ValidationError("set '" + id_ + "': non-finite feature at row " +
                                std::to_string(i));
    if (coords_) {
      if (coords_->rows() != features_.rows())
        throw ValidationError("set '" + id_ + "': coords row count differs from N");
      std::set<std::pair<std::int32_t, std::int32_t>> seen;
      for (Index i = 0; i < coords_->rows(); ++i)
        if (!seen.emplace((*coords_)(i, 0), (*coords_)(i, 1)).second)
          throw ValidationError("set '" + id_ + "': duplicate coords at row " +
                                std::to_string(i));
    }
    if (target_) target_->validate();
  }

  std::string id_;
  FeatureMatrix features_;
  std::optional<CoordMatrix> coords_;
  std::optional<Target> target_;
};

/// A non-empty collection of sets sharing one feature dimension.
class Cohort {
 public:
  explicit Cohort(std::vector<EmbeddingSet> sets,
                  std::optional<std::uint32_t> num_classes = std::nullopt)
      : sets_(std::move(sets)), num_classes_(num_classes) {
    if (sets_.empty()) throw ValidationError("cohort: must contain at least one set");
    d_ = sets_.front().dim();
    for (const auto& s : sets_) {
      if (s.dim() != d_)
        throw ValidationError("cohort: set '" + s.id() + "' has d=" + std::to_string(s.dim()) +
                              ", expected " + std::to_string(d_));
      if (num_classes_ && s.target() && s.target()->class_label &&
          *s.target()->class_label >= *num_classes_)
        throw ValidationError("cohort: set '" + s.id() + "' class_label out of range");
    }
  }

  const std::vector<EmbeddingSet>& sets() const { return sets_; }
  Index dim() const { return d_; }
  std::optional<std::uint32_t> num_classes() const { return num_classes_; }
  std::size_t size() const { return sets_.size(); }
  const EmbeddingSet& operator[](std::size_t i) const { return sets_[i]; }

  Index total_elements() const {
    Index n = 0;
    for (const auto& s : sets_) n += s.size();
    return n;
  }

  const EmbeddingSet* find(std::string_view id) const {
    for (const auto& s : sets_)
      if (s.id() == id) return &s;
    return nullptr;
  }

  std::vector<Target> targets() const {
    std::vector<Target> out;
    out.reserve(sets_.size());
    for (const auto& s : sets_) {
      if (!s.target()) throw ValidationError("cohort: set '" + s.id() + "' has no target");
      out.push_back(*s.target());
    }
    return out;
  }

  bool operator==(const Cohort&) const = default;

 private:
  std::vector<EmbeddingSet> sets_;
  Index d_ = 0;
  std::optional<std::uint32_t> num_classes_;
};

}  // namespace pagg
