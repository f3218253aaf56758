#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "pagg/detail/binary_io.hpp"
#include "pagg/detail/numeric.hpp"
#include "pagg/embedding.hpp"

namespace pagg {

enum class MapKind : std::uint8_t { identity, linear, mlp };
enum class LossKind : std::uint8_t { cross_entropy, cox };
enum class LrSchedule : std::uint8_t { constant, cosine };

inline std::string_view to_string(MapKind k) {
  switch (k) {
    case MapKind::identity: return "identity";
    case MapKind::linear: return "linear";
    case MapKind::mlp: return "mlp";
  }
  return "?";
}

inline MapKind map_kind_from_string(std::string_view s) {
  if (s == "identity") return MapKind::identity;
  if (s == "linear") return MapKind::linear;
  if (s == "mlp") return MapKind::mlp;
  throw ValidationError("unknown map kind '" + std::string(s) + "'");
}

/// Per-block maps g_indiv (applied to every prototype block) followed by g_pred.
/// MLP = Linear -> ReLU -> Linear with hidden_dim units.
struct HeadSpec {
  MapKind indiv_kind = MapKind::identity;
  MapKind pred_kind = MapKind::linear;
  Index indiv_out_dim = 8;
  Index hidden_dim = 32;
  Index out_dim = 1;

  bool operator==(const HeadSpec&) const = default;
};

namespace detail {

struct TensorSlot {
  Index offset = 0;
  Index rows = 0;
  Index cols = 0;
};

// One map in the head: identity, linear (W, b) or mlp (W1, b1, W2, b2).
struct MapShape {
  MapKind kind = MapKind::identity;
  Index in = 0;
  Index out = 0;
  Index hidden = 0;
  std::vector<TensorSlot> tensors;
};

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMapMut = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline RowMajorMap view(const Eigen::VectorXd& p, const TensorSlot& t) {
  return RowMajorMap(p.data() + t.offset, t.rows, t.cols);
}
inline RowMajorMapMut view(Eigen::VectorXd& p, const TensorSlot& t) {
  return RowMajorMapMut(p.data() + t.offset, t.rows, t.cols);
}

inline Eigen::VectorXd map_forward(const MapShape& m, const Eigen::VectorXd& p,
                                   const Eigen::VectorXd& x, Eigen::VectorXd* hidden_pre = nullptr) {
  switch (m.kind) {
    case MapKind::identity: return x;
    case MapKind::linear: return view(p, m.tensors[0]) * x + view(p, m.tensors[1]);
    case MapKind::mlp: {
      Eigen::VectorXd pre = view(p, m.tensors[0]) * x + view(p, m.tensors[1]);
      if (hidden_pre) *hidden_pre = pre;
      return view(p, m.tensors[2]) * pre.cwiseMax(0.0) + view(p, m.tensors[3]);
    }
  }
  return x;
}

// Accumulates dL/dparams into `grad`; returns dL/dx.
inline Eigen::VectorXd map_backward(const MapShape& m, const Eigen::VectorXd& p,
                                    const Eigen::VectorXd& x, const Eigen::VectorXd& hidden_pre,
                                    const Eigen::VectorXd& gy, Eigen::VectorXd& grad) {
  switch (m.kind) {
    case MapKind::identity: return gy;
    case MapKind::linear:
      view(grad, m.tensors[0]).noalias() += gy * x.transpose();
      view(grad, m.tensors[1]) += gy;
      return view(p, m.tensors[0]).transpose() * gy;
    case MapKind::mlp: {
      const Eigen::VectorXd h = hidden_pre.cwiseMax(0.0);
      view(grad, m.tensors[2]).noalias() += gy * h.transpose();
      view(grad, m.tensors[3]) += gy;
      Eigen::VectorXd gh = view(p, m.tensors[2]).transpose() * gy;
      for (Index i = 0; i < gh.size(); ++i)
        if (!(hidden_pre(i) > 0.0)) gh(i) = 0.0;
      view(grad, m.tensors[0]).noalias() += gh * x.transpose();
      view(grad, m.tensors[1]) += gh;
      return view(p, m.tensors[0]).transpose() * gh;
    }
  }
  return gy;
}

}  // namespace detail

/// Structured predictor over a SetEmbedding: z' = [g_indiv(block_1), …, g_indiv(block_B)],
/// output = g_pred(z'). Each block has its own g_indiv parameters. All parameters live
/// in one flat vector.
class PredictorHead {
 public:
  PredictorHead(HeadSpec spec, Variant input_variant, Index C, Index d, std::uint64_t init_seed)
      : spec_(spec), variant_(input_variant), C_(C), d_(d) {
    build();
    std::mt19937_64 rng(init_seed);
    auto init_map = [&](const detail::MapShape& m) {
      // uniform ±1/sqrt(fan_in) for weights and biases
      for (std::size_t t = 0; t < m.tensors.size(); t += 2) {
        const auto& w = m.tensors[t];
        const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (Index i = 0; i < w.rows * w.cols; ++i) params_(w.offset + i) = u(rng);
        const auto& b = m.tensors[t + 1];
        for (Index i = 0; i < b.rows; ++i) params_(b.offset + i) = u(rng);
      }
    };
    for (const auto& m : indiv_) init_map(m);
    init_map(pred_);
  }

  const HeadSpec& spec() const { return spec_; }
  Variant input_variant() const { return variant_; }
  Index C() const { return C_; }
  Index d() const { return d_; }
  Index num_params() const { return params_.size(); }
  Index input_length() const { return embedding_length(variant_, C_, d_); }
  const std::vector<Block>& blocks() const { return blocks_; }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  double final_train_loss = std::numeric_limits<double>::quiet_NaN();

  /// Tensor shapes in storage order (row-major data, contiguous in params()).
  std::vector<std::pair<Index, Index>> tensor_shapes() const {
    std::vector<std::pair<Index, Index>> out;
    for (const auto& m : indiv_)
      for (const auto& t : m.tensors) out.emplace_back(t.rows, t.cols);
    for (const auto& t : pred_.tensors) out.emplace_back(t.rows, t.cols);
    return out;
  }

  void check_input(const SetEmbedding& e) const {
    if (e.variant != variant_)
      throw ValidationError("predictor: embedding variant '" + std::string(to_string(e.variant)) +
                            "' but head expects '" + std::string(to_string(variant_)) + "'");
    if (e.values.size() != input_length())
      throw ValidationError("predictor: embedding length " + std::to_string(e.values.size()) +
                            " but head expects " + std::to_string(input_length()));
  }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
    if (x.size() != input_length()) throw ValidationError("predictor: input length mismatch");
    return detail::map_forward(pred_, params_, concat_indiv(x, nullptr));
  }

  Eigen::VectorXd forward(const SetEmbedding& e) const {
    check_input(e);
    return forward(e.values);
  }

  /// Adds dL/dparams for one sample into `grad`, given dL/doutput.
  void accumulate_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& grad_out,
                           Eigen::VectorXd& grad) const {
    std::vector<Eigen::VectorXd> hidden(indiv_.size());
    const Eigen::VectorXd zp = concat_indiv(x, &hidden);
    Eigen::VectorXd pred_hidden;
    detail::map_forward(pred_, params_, zp, &pred_hidden);
    const Eigen::VectorXd gz = detail::map_backward(pred_, params_, zp, pred_hidden, grad_out, grad);
    if (spec_.indiv_kind == MapKind::identity) return;
    for (std::size_t b = 0; b < indiv_.size(); ++b) {
      const auto& blk = blocks_[b];
      detail::map_backward(indiv_[b], params_, x.segment(blk.offset, blk.length), hidden[b],
                           gz.segment(static_cast<Index>(b) * spec_.indiv_out_dim, spec_.indiv_out_dim),
                           grad);
    }
  }

 private:
  void build() {
    if (spec_.out_dim < 1) throw ValidationError("head: out_dim must be >= 1");
    if (spec_.indiv_out_dim < 1) throw ValidationError("head: indiv_out_dim must be >= 1");
    if (spec_.hidden_dim < 1) throw ValidationError("head: hidden_dim must be >= 1");
    if (d_ < 1) throw ValidationError("head: d must be >= 1");
    if (variant_ != Variant::deepsets && C_ < 1) throw ValidationError("head: C must be >= 1");
    blocks_ = block_layout(variant_, C_, d_);
    Index offset = 0;
    auto make = [&](MapKind kind, Index in, Index out) {
      detail::MapShape m{kind, in, kind == MapKind::identity ? in : out, spec_.hidden_dim, {}};
      auto add = [&](Index r, Index c) {
        m.tensors.push_back({offset, r, c});
        offset += r * c;
      };
      if (kind == MapKind::linear) {
        add(out, in);
        add(out, 1);
      } else if (kind == MapKind::mlp) {
        add(spec_.hidden_dim, in);
        add(spec_.hidden_dim, 1);
        add(out, spec_.hidden_dim);
        add(out, 1);
      }
      return m;
    };
    Index zp_len = input_length();
    if (spec_.indiv_kind != MapKind::identity) {
      for (const auto& b : blocks_) indiv_.push_back(make(spec_.indiv_kind, b.length, spec_.indiv_out_dim));
      zp_len = static_cast<Index>(blocks_.size()) * spec_.indiv_out_dim;
    }
    if (spec_.pred_kind == MapKind::identity && zp_len != spec_.out_dim)
      throw ValidationError("head: identity g_pred needs concatenated length " +
                            std::to_string(zp_len) + " == out_dim " + std::to_string(spec_.out_dim));
    pred_ = make(spec_.pred_kind, zp_len, spec_.out_dim);
    params_ = Eigen::VectorXd::Zero(offset);
  }

  Eigen::VectorXd concat_indiv(const Eigen::VectorXd& x, std::vector<Eigen::VectorXd>* hidden) const {
    if (spec_.indiv_kind == MapKind::identity) return x;
    Eigen::VectorXd zp(static_cast<Index>(blocks_.size()) * spec_.indiv_out_dim);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& blk = blocks_[b];
      zp.segment(static_cast<Index>(b) * spec_.indiv_out_dim, spec_.indiv_out_dim) =
          detail::map_forward(indiv_[b], params_, x.segment(blk.offset, blk.length),
                              hidden ? &(*hidden)[b] : nullptr);
    }
    return zp;
  }

  HeadSpec spec_;
  Variant variant_;
  Index C_;
  Index d_;
  std::vector<Block> blocks_;
  std::vector<detail::MapShape> indiv_;
  detail::MapShape pred_;
  Eigen::VectorXd params_;
};

inline Eigen::VectorXd forward(const PredictorHead& head, const SetEmbedding& emb) {
  return head.forward(emb);
}

// ---------------------------------------------------------------------------
// Losses

struct LossWithGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

/// −log softmax(logits)[label] and its gradient softmax − onehot.
inline LossWithGrad cross_entropy_with_grad(const Eigen::VectorXd& logits, Index label) {
  if (label < 0 || label >= logits.size())
    throw ValidationError("cross_entropy: label " + std::to_string(label) + " out of range");
  const double lse = detail::log_sum_exp(logits);
  LossWithGrad r;
  r.loss = lse - logits(label);
  r.grad = (logits.array() - lse).exp();
  r.grad(label) -= 1.0;
  return r;
}

inline double loss_cross_entropy(const Eigen::VectorXd& logits, Index label) {
  return cross_entropy_with_grad(logits, label).loss;
}

/// Negative Cox partial log-likelihood averaged over events, Breslow ties
/// (risk set of an event at t is every subject with time >= t).
inline LossWithGrad cox_with_grad(std::span<const double> risks, std::span<const double> times,
                                  const std::vector<bool>& events) {
  const std::size_t n = risks.size();
  if (times.size() != n || events.size() != n)
    throw ValidationError("loss_cox: inputs differ in length");
  if (n < 2) throw ValidationError("loss_cox: batch needs at least 2 subjects");
  std::size_t num_events = 0;
  for (bool e : events) num_events += e ? 1 : 0;
  if (num_events == 0) throw ValidationError("loss_cox: batch has no events");

  LossWithGrad r;
  r.grad = Eigen::VectorXd::Zero(static_cast<Index>(n));
  Eigen::VectorXd at_risk(static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (!events[i]) continue;
    Index m = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (times[j] >= times[i]) at_risk(m++) = risks[j];
    const double lse = detail::log_sum_exp(at_risk.head(m));
    r.loss -= risks[i] - lse;
    r.grad(static_cast<Index>(i)) -= 1.0;
    for (std::size_t j = 0; j < n; ++j)
      if (times[j] >= times[i]) r.grad(static_cast<Index>(j)) += std::exp(risks[j] - lse);
  }
  const double inv = 1.0 / static_cast<double>(num_events);
  r.loss *= inv;
  r.grad *= inv;
  return r;
}

inline double loss_cox(std::span<const double> risks, std::span<const double> times,
                       const std::vector<bool>& events) {
  return cox_with_grad(risks, times, events).loss;
}

// ---------------------------------------------------------------------------
// Batches

/// Non-owning view of training samples.
struct Batch {
  std::vector<const SetEmbedding*> inputs;
  std::vector<const Target*> targets;
};

inline Batch make_batch(std::span<const SetEmbedding> embs, std::span<const Target> targets) {
  if (embs.size() != targets.size()) throw ValidationError("batch: embeddings/targets misaligned");
  Batch b;
  for (std::size_t i = 0; i < embs.size(); ++i) {
    b.inputs.push_back(&embs[i]);
    b.targets.push_back(&targets[i]);
  }
  return b;
}

/// Mean batch loss and its gradient with respect to the head parameters.
inline LossWithGrad batch_loss_and_grad(const PredictorHead& head, const Batch& batch,
                                        LossKind kind, bool want_grad = true) {
  const std::size_t B = batch.inputs.size();
  if (B == 0) throw ValidationError("batch: empty");
  std::vector<Eigen::VectorXd> outputs(B);
  for (std::size_t i = 0; i < B; ++i) outputs[i] = head.forward(*batch.inputs[i]);

  std::vector<Eigen::VectorXd> grad_out(B);
  LossWithGrad r;
  if (kind == LossKind::cross_entropy) {
    for (std::size_t i = 0; i < B; ++i) {
      const Target& t = *batch.targets[i];
      if (!t.class_label) throw ValidationError("cross_entropy: target has no class label");
      auto ce = cross_entropy_with_grad(outputs[i], static_cast<Index>(*t.class_label));
      r.loss += ce.loss / static_cast<double>(B);
      grad_out[i] = ce.grad / static_cast<double>(B);
    }
  } else {
    if (head.spec().out_dim != 1) throw ValidationError("cox: head out_dim must be 1");
    std::vector<double> risks(B), times(B);
    std::vector<bool> events(B);
    for (std::size_t i = 0; i < B; ++i) {
      const Target& t = *batch.targets[i];
      if (!t.time || !t.event) throw ValidationError("cox: target has no survival fields");
      risks[i] = outputs[i](0);
      times[i] = *t.time;
      events[i] = *t.event;
    }
    auto cox = cox_with_grad(risks, times, events);
    r.loss = cox.loss;
    for (std::size_t i = 0; i < B; ++i) grad_out[i] = Eigen::VectorXd::Constant(1, cox.grad(static_cast<Index>(i)));
  }
  if (!want_grad) return r;
  r.grad = Eigen::VectorXd::Zero(head.num_params());
  for (std::size_t i = 0; i < B; ++i)
    head.accumulate_gradient(batch.inputs[i]->values, grad_out[i], r.grad);
  return r;
}

/// Max relative error between the analytic gradient and central differences
/// (step 1e-5). Relative error is |a − n| / max(|a|, |n|, 1e-6).
inline double grad_check(const PredictorHead& head, const Batch& batch, LossKind kind,
                         double step = 1e-5) {
  if (head.num_params() == 0) return 0.0;
  const Eigen::VectorXd analytic = batch_loss_and_grad(head, batch, kind).grad;
  PredictorHead probe = head;
  double worst = 0.0;
  for (Index i = 0; i < probe.num_params(); ++i) {
    const double orig = probe.params()(i);
    probe.params()(i) = orig + step;
    const double up = batch_loss_and_grad(probe, batch, kind, false).loss;
    probe.params()(i) = orig - step;
    const double down = batch_loss_and_grad(probe, batch, kind, false).loss;
    probe.params()(i) = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic(i)), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic(i) - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  int epochs = 20;
  Index batch_size = 32;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::cross_entropy;
  LrSchedule lr_schedule = LrSchedule::cosine;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(lr >= 0.0)) throw ValidationError("train: lr must be >= 0");
    if (!(weight_decay >= 0.0)) throw ValidationError("train: weight_decay must be >= 0");
    if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
    if (loss == LossKind::cox && batch_size < 2)
      throw ValidationError("train: cox loss needs batch_size >= 2");
  }
};

/// Mini-batch AdamW with decoupled weight decay; one call to run_epoch() per epoch.
/// Shuffles come from cfg.seed, so runs are reproducible.
class Trainer {
 public:
  Trainer(PredictorHead head, std::span<const SetEmbedding> embs, std::span<const Target> targets,
          TrainConfig cfg)
      : head_(std::move(head)), embs_(embs), targets_(targets), cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    if (embs_.empty()) throw ValidationError("train: no samples");
    if (embs_.size() != targets_.size()) throw ValidationError("train: embeddings/targets misaligned");
    for (std::size_t i = 0; i < embs_.size(); ++i) {
      head_.check_input(embs_[i]);
      const Target& t = targets_[i];
      if (cfg_.loss == LossKind::cross_entropy) {
        if (!t.class_label) throw ValidationError("train: cross_entropy needs class-label targets");
        if (static_cast<Index>(*t.class_label) >= head_.spec().out_dim)
          throw ValidationError("train: class label exceeds out_dim");
      } else if (!t.time || !t.event) {
        throw ValidationError("train: cox needs survival targets");
      }
    }
    m_ = Eigen::VectorXd::Zero(head_.num_params());
    v_ = Eigen::VectorXd::Zero(head_.num_params());
    const auto n = static_cast<Index>(embs_.size());
    batches_per_epoch_ = (n + cfg_.batch_size - 1) / cfg_.batch_size;
    total_steps_ = batches_per_epoch_ * cfg_.epochs;
  }

  /// Runs one epoch; returns the mean loss over the batches it stepped on.
  double run_epoch() {
    std::vector<std::size_t> order(embs_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng_);
    double total = 0.0;
    int used = 0;
    for (Index b = 0; b < batches_per_epoch_; ++b) {
      Batch batch;
      const auto begin = static_cast<std::size_t>(b * cfg_.batch_size);
      const auto end = std::min(order.size(), begin + static_cast<std::size_t>(cfg_.batch_size));
      bool any_event = false;
      for (std::size_t i = begin; i < end; ++i) {
        batch.inputs.push_back(&embs_[order[i]]);
        batch.targets.push_back(&targets_[order[i]]);
        any_event = any_event || targets_[order[i]].event.value_or(false);
      }
      const double lr = current_lr();
      ++step_;
      if (cfg_.loss == LossKind::cox && (batch.inputs.size() < 2 || !any_event)) continue;
      const auto lg = batch_loss_and_grad(head_, batch, cfg_.loss);
      if (!std::isfinite(lg.loss) || !detail::all_finite(lg.grad))
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch_) +
                             ", batch " + std::to_string(b));
      apply_update(lg.grad, lr);
      total += lg.loss;
      ++used;
    }
    ++epoch_;
    if (used == 0) throw ValidationError("train: no usable batch in epoch (cox needs events)");
    last_loss_ = total / used;
    head_.final_train_loss = last_loss_;
    return last_loss_;
  }

  const PredictorHead& head() const { return head_; }
  PredictorHead& head() { return head_; }
  int epochs_run() const { return epoch_; }
  double last_loss() const { return last_loss_; }

 private:
  double current_lr() const {
    if (cfg_.lr_schedule == LrSchedule::constant || total_steps_ == 0) return cfg_.lr;
    const double frac = static_cast<double>(std::min(step_, total_steps_)) / static_cast<double>(total_steps_);
    return cfg_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  }

  void apply_update(const Eigen::VectorXd& g, double lr) {
    ++adam_t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * g;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg_.beta1, adam_t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, adam_t_);
    Eigen::VectorXd& p = head_.params();
    p -= lr * cfg_.weight_decay * p;
    p.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.adam_eps);
  }

  PredictorHead head_;
  std::span<const SetEmbedding> embs_;
  std::span<const Target> targets_;
  TrainConfig cfg_;
  std::mt19937_64 rng_;
  Eigen::VectorXd m_, v_;
  Index batches_per_epoch_ = 0;
  Index total_steps_ = 0;
  Index step_ = 0;
  int adam_t_ = 0;
  int epoch_ = 0;
  double last_loss_ = std::numeric_limits<double>::quiet_NaN();
};

/// Builds a head from `spec` (initialised from init_seed) and trains it for cfg.epochs.
inline PredictorHead train(const HeadSpec& spec, std::uint64_t init_seed,
                           std::span<const SetEmbedding> embs, std::span<const Target> targets,
                           const TrainConfig& cfg) {
  if (embs.empty()) throw ValidationError("train: no samples");
  const auto& e0 = embs.front();
  Trainer trainer(PredictorHead(spec, e0.variant, e0.C, e0.d, init_seed), embs, targets, cfg);
  for (int ep = 0; ep < cfg.epochs; ++ep) trainer.run_epoch();
  return trainer.head();
}

/// argmax of the logits (lowest index on ties).
inline int predict_class(const PredictorHead& head, const SetEmbedding& e) {
  const Eigen::VectorXd out = head.forward(e);
  Index best = 0;
  for (Index i = 1; i < out.size(); ++i)
    if (out(i) > out(best)) best = i;
  return static_cast<int>(best);
}

// ---------------------------------------------------------------------------
// Serialisation: "PHED" | version u16 | spec JSON length u32 | spec JSON |
// tensor count u32 | per tensor: rows u32, cols u32, rows·cols f64 (row-major).

namespace detail {
inline constexpr std::string_view kHeadMagic = "PHED";
inline constexpr std::uint16_t kHeadVersion = 1;
}  // namespace detail

inline nlohmann::ordered_json head_spec_json(const PredictorHead& head) {
  nlohmann::ordered_json j;
  j["indiv_kind"] = to_string(head.spec().indiv_kind);
  j["pred_kind"] = to_string(head.spec().pred_kind);
  j["indiv_out_dim"] = head.spec().indiv_out_dim;
  j["hidden_dim"] = head.spec().hidden_dim;
  j["out_dim"] = head.spec().out_dim;
  j["input_variant"] = to_string(head.input_variant());
  j["C"] = head.C();
  j["d"] = head.d();
  if (std::isfinite(head.final_train_loss)) j["final_train_loss"] = head.final_train_loss;
  return j;
}

inline std::vector<std::uint8_t> encode_head(const PredictorHead& head) {
  detail::ByteWriter w;
  w.put_magic(detail::kHeadMagic);
  w.put<std::uint16_t>(detail::kHeadVersion);
  const std::string spec = head_spec_json(head).dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.size()));
  w.put_bytes(spec);
  const auto shapes = head.tensor_shapes();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(shapes.size()));
  Index offset = 0;
  for (const auto& [r, c] : shapes) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c));
    for (Index i = 0; i < r * c; ++i) w.put<double>(head.params()(offset + i));
    offset += r * c;
  }
  return w.bytes();
}

inline PredictorHead decode_head(std::span<const std::uint8_t> bytes, const std::string& what) {
  detail::ByteReader r(bytes, what);
  r.expect_magic(detail::kHeadMagic);
  if (r.get<std::uint16_t>() != detail::kHeadVersion) throw ParseError(what + ": unsupported head version");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(r.get_string(r.get<std::uint32_t>()));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(what + ": bad head spec: " + e.what());
  }
  try {
    HeadSpec spec;
    spec.indiv_kind = map_kind_from_string(j.at("indiv_kind").get<std::string>());
    spec.pred_kind = map_kind_from_string(j.at("pred_kind").get<std::string>());
    spec.indiv_out_dim = j.at("indiv_out_dim").get<Index>();
    spec.hidden_dim = j.at("hidden_dim").get<Index>();
    spec.out_dim = j.at("out_dim").get<Index>();
    PredictorHead head(spec, variant_from_string(j.at("input_variant").get<std::string>()),
                       j.at("C").get<Index>(), j.at("d").get<Index>(), 0);
    if (j.contains("final_train_loss")) head.final_train_loss = j["final_train_loss"].get<double>();
    const auto shapes = head.tensor_shapes();
    if (r.get<std::uint32_t>() != shapes.size()) throw ParseError(what + ": tensor count mismatch");
    Index offset = 0;
    for (const auto& [rows, cols] : shapes) {
      if (r.get<std::uint32_t>() != rows || r.get<std::uint32_t>() != cols)
        throw ParseError(what + ": tensor shape mismatch");
      for (Index i = 0; i < rows * cols; ++i) {
        const double v = r.get<double>();
        if (!std::isfinite(v)) throw ParseError(what + ": non-finite parameter");
        head.params()(offset + i) = v;
      }
      offset += rows * cols;
    }
    if (r.remaining() != 0) throw ParseError(what + ": trailing bytes");
    return head;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(what + ": bad head spec: " + e.what());
  } catch (const ValidationError& e) {
    throw ParseError(what + ": " + e.what());
  }
}

inline void save_head(const PredictorHead& head, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_head(head));
}

inline PredictorHead load_head(const std::filesystem::path& path) {
  return decode_head(detail::read_file_bytes(path), path.string());
}

}  // namespace pagg
