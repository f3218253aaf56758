#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "pagg/cohort_io.hpp"
#include "pagg/detail/binary_io.hpp"
#include "pagg/mixture.hpp"

namespace pagg {

enum class Variant : std::uint8_t {
  all = 0,
  wa = 1,
  top = 2,
  bottom = 3,
  deepsets = 4,
  protocounts = 5,
  h2t = 6,
  ot = 7,
};

inline constexpr std::array<std::string_view, 8> kVariantNames = {
    "all", "wa", "top", "bottom", "deepsets", "protocounts", "h2t", "ot"};

inline std::string_view to_string(Variant v) { return kVariantNames[static_cast<std::size_t>(v)]; }

inline Variant variant_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kVariantNames.size(); ++i)
    if (kVariantNames[i] == s) return static_cast<Variant>(i);
  throw ValidationError("unknown embedding variant '" + std::string(s) + "'");
}

/// Embedding length for a variant: all C(1+2d), wa 2d, top/bottom 1+2d, deepsets d,
/// protocounts C, h2t/ot C·d.
inline Index embedding_length(Variant v, Index C, Index d) {
  switch (v) {
    case Variant::all: return C * (1 + 2 * d);
    case Variant::wa: return 2 * d;
    case Variant::top:
    case Variant::bottom: return 1 + 2 * d;
    case Variant::deepsets: return d;
    case Variant::protocounts: return C;
    case Variant::h2t:
    case Variant::ot: return C * d;
  }
  throw ValidationError("bad variant");
}

/// True when the vector decomposes into one slice per prototype.
inline bool has_prototype_blocks(Variant v) {
  return v == Variant::all || v == Variant::protocounts || v == Variant::h2t || v == Variant::ot;
}

struct Block {
  Index offset = 0;
  Index length = 0;
  bool operator==(const Block&) const = default;
};

/// Disjoint covering slices: one per prototype for block-structured variants,
/// otherwise a single slice over the whole vector.
inline std::vector<Block> block_layout(Variant v, Index C, Index d) {
  const Index total = embedding_length(v, C, d);
  if (!has_prototype_blocks(v)) return {Block{0, total}};
  const Index width = total / C;
  std::vector<Block> blocks;
  for (Index c = 0; c < C; ++c) blocks.push_back(Block{c * width, width});
  return blocks;
}

/// Column names such as `p3.pi`, `p3.mu.17`, `wa.sigma.0`, `mean.4`.
inline std::vector<std::string> column_names(Variant v, Index C, Index d) {
  std::vector<std::string> names;
  auto theta = [&](const std::string& prefix) {
    names.push_back(prefix + ".pi");
    for (Index k = 0; k < d; ++k) names.push_back(prefix + ".mu." + std::to_string(k));
    for (Index k = 0; k < d; ++k) names.push_back(prefix + ".sigma." + std::to_string(k));
  };
  switch (v) {
    case Variant::all:
      for (Index c = 0; c < C; ++c) theta("p" + std::to_string(c));
      break;
    case Variant::wa:
      for (Index k = 0; k < d; ++k) names.push_back("wa.mu." + std::to_string(k));
      for (Index k = 0; k < d; ++k) names.push_back("wa.sigma." + std::to_string(k));
      break;
    case Variant::top: theta("top"); break;
    case Variant::bottom: theta("bottom"); break;
    case Variant::deepsets:
      for (Index k = 0; k < d; ++k) names.push_back("mean." + std::to_string(k));
      break;
    case Variant::protocounts:
      for (Index c = 0; c < C; ++c) names.push_back("p" + std::to_string(c) + ".count");
      break;
    case Variant::h2t:
    case Variant::ot:
      for (Index c = 0; c < C; ++c)
        for (Index k = 0; k < d; ++k)
          names.push_back("p" + std::to_string(c) + "." + std::string(to_string(v)) + "." +
                          std::to_string(k));
      break;
  }
  return names;
}

/// Fixed-length set embedding. C is 0 for deepsets (no prototypes involved).
struct SetEmbedding {
  Eigen::VectorXd values;
  Variant variant = Variant::all;
  Index C = 0;
  Index d = 0;
  std::string set_id;
  /// Prototype indices needing attention: empty H2T clusters, frozen mixture components.
  std::vector<Index> flagged;
  /// Component chosen by top/bottom.
  std::optional<Index> selected;

  std::vector<Block> layout() const { return block_layout(variant, C, d); }

  void validate() const {
    if (d < 1) throw ValidationError("embedding: d must be >= 1");
    if (variant != Variant::deepsets && C < 1) throw ValidationError("embedding: C must be >= 1");
    if (values.size() != embedding_length(variant, C, d))
      throw ValidationError("embedding '" + set_id + "': length " +
                            std::to_string(values.size()) + " does not match variant " +
                            std::string(to_string(variant)));
  }
};

/// [pi_c, mu_c, sigma_c] per prototype, prototypes in order.
inline SetEmbedding compose_all(const MixtureParams& params) {
  const Index C = params.components(), d = params.dim(), M = 1 + 2 * d;
  SetEmbedding e{Eigen::VectorXd(C * M), Variant::all, C, d, {}, params.frozen, std::nullopt};
  for (Index c = 0; c < C; ++c) {
    e.values(c * M) = params.pi(c);
    e.values.segment(c * M + 1, d) = params.mu.row(c).transpose();
    e.values.segment(c * M + 1 + d, d) = params.sigma.row(c).transpose();
  }
  return e;
}

/// Inverse of compose_all.
inline MixtureParams read_all_blocks(const SetEmbedding& e) {
  if (e.variant != Variant::all) throw ValidationError("read_all_blocks: variant is not 'all'");
  e.validate();
  const Index C = e.C, d = e.d, M = 1 + 2 * d;
  MixtureParams p;
  p.pi.resize(C);
  p.mu.resize(C, d);
  p.sigma.resize(C, d);
  for (Index c = 0; c < C; ++c) {
    p.pi(c) = e.values(c * M);
    p.mu.row(c) = e.values.segment(c * M + 1, d).transpose();
    p.sigma.row(c) = e.values.segment(c * M + 1 + d, d).transpose();
  }
  return p;
}

/// [Σ_c pi_c mu_c ; Σ_c pi_c sigma_c].
inline SetEmbedding compose_wa(const MixtureParams& params) {
  const Index d = params.dim();
  SetEmbedding e{Eigen::VectorXd(2 * d), Variant::wa, params.components(), d, {}, params.frozen,
                 std::nullopt};
  e.values.head(d) = params.mu.transpose() * params.pi;
  e.values.tail(d) = params.sigma.transpose() * params.pi;
  return e;
}

namespace detail {
inline SetEmbedding compose_selected(const MixtureParams& params, Index c, Variant v) {
  const Index d = params.dim();
  SetEmbedding e{Eigen::VectorXd(1 + 2 * d), v, params.components(), d, {}, {}, c};
  e.values(0) = params.pi(c);
  e.values.segment(1, d) = params.mu.row(c).transpose();
  e.values.segment(1 + d, d) = params.sigma.row(c).transpose();
  return e;
}
}  // namespace detail

/// Block of the component with the largest weight (lowest index on ties).
inline SetEmbedding compose_top(const MixtureParams& params) {
  Index best = 0;
  for (Index c = 1; c < params.components(); ++c)
    if (params.pi(c) > params.pi(best)) best = c;
  return detail::compose_selected(params, best, Variant::top);
}

/// Block of the component with the smallest weight (lowest index on ties).
inline SetEmbedding compose_bottom(const MixtureParams& params) {
  Index best = 0;
  for (Index c = 1; c < params.components(); ++c)
    if (params.pi(c) < params.pi(best)) best = c;
  return detail::compose_selected(params, best, Variant::bottom);
}

// ---------------------------------------------------------------------------
// Embedding files

namespace detail {
inline constexpr std::string_view kEmbeddingMagic = "PEMB";
inline constexpr std::uint16_t kEmbeddingVersion = 1;
}  // namespace detail

/// "PEMB" | version u16 | variant u8 | C u32 | d u32 | num_sets u32 |
/// per set: id_len u16, id, f32 vector (length fixed by variant, C, d).
inline std::vector<std::uint8_t> encode_embeddings(const std::vector<SetEmbedding>& embs) {
  if (embs.empty()) throw ValidationError("encode_embeddings: nothing to write");
  const auto& first = embs.front();
  detail::ByteWriter w;
  w.put_magic(detail::kEmbeddingMagic);
  w.put<std::uint16_t>(detail::kEmbeddingVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(first.variant));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(first.C));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(first.d));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(embs.size()));
  for (const auto& e : embs) {
    e.validate();
    if (e.variant != first.variant || e.C != first.C || e.d != first.d)
      throw ValidationError("encode_embeddings: mixed variants or shapes");
    if (e.set_id.size() > 0xFFFF) throw ValidationError("set id too long");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.set_id.size()));
    w.put_bytes(e.set_id);
    for (Index i = 0; i < e.values.size(); ++i) w.put<float>(static_cast<float>(e.values(i)));
  }
  return w.bytes();
}

inline std::vector<SetEmbedding> decode_embeddings(std::span<const std::uint8_t> bytes,
                                                   const std::string& what) {
  detail::ByteReader r(bytes, what);
  r.expect_magic(detail::kEmbeddingMagic);
  if (r.get<std::uint16_t>() != detail::kEmbeddingVersion)
    throw ParseError(what + ": unsupported embedding version");
  const auto tag = r.get<std::uint8_t>();
  if (tag >= kVariantNames.size()) throw ParseError(what + ": unknown variant tag");
  const auto variant = static_cast<Variant>(tag);
  const Index C = r.get<std::uint32_t>();
  const Index d = r.get<std::uint32_t>();
  const auto num_sets = r.get<std::uint32_t>();
  const Index len = embedding_length(variant, C, d);
  std::vector<SetEmbedding> out;
  out.reserve(num_sets);
  for (std::uint32_t j = 0; j < num_sets; ++j) {
    SetEmbedding e;
    e.variant = variant;
    e.C = C;
    e.d = d;
    e.set_id = r.get_string(r.get<std::uint16_t>());
    e.values.resize(len);
    for (Index i = 0; i < len; ++i) {
      const float v = r.get<float>();
      if (!std::isfinite(v))
        throw ParseError(what + ": set '" + e.set_id + "' has a non-finite value");
      e.values(i) = v;
    }
    try {
      e.validate();
    } catch (const ValidationError& err) {
      throw ParseError(what + ": " + err.what());
    }
    out.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw ParseError(what + ": trailing bytes");
  return out;
}

inline void save_embeddings(const std::vector<SetEmbedding>& embs,
                            const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_embeddings(embs));
}

inline std::vector<SetEmbedding> load_embeddings(const std::filesystem::path& path) {
  return decode_embeddings(detail::read_file_bytes(path), path.string());
}

/// One row per set: `id,<block-qualified columns>`, values as f32 with 9 significant digits.
inline std::string embeddings_to_csv(const std::vector<SetEmbedding>& embs) {
  if (embs.empty()) throw ValidationError("embeddings_to_csv: nothing to write");
  std::ostringstream out;
  out << "id";
  for (const auto& n : column_names(embs.front().variant, embs.front().C, embs.front().d))
    out << ',' << n;
  out << '\n';
  for (const auto& e : embs) {
    detail::check_csv_safe(e.set_id, "set id");
    out << e.set_id;
    for (Index i = 0; i < e.values.size(); ++i)
      out << ',' << detail::format_g9(static_cast<float>(e.values(i)));
    out << '\n';
  }
  return out.str();
}

}  // namespace pagg
