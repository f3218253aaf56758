#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pagg/detail/binary_io.hpp"
#include "pagg/set_data.hpp"

namespace pagg {

enum class CohortFormat { binary, csv };

namespace detail {

inline constexpr std::string_view kCohortMagic = "PAGG";
inline constexpr std::uint16_t kCohortVersion = 1;

enum : std::uint8_t { kFlagCoords = 1u << 0, kFlagClass = 1u << 1, kFlagSurvival = 1u << 2 };

inline std::string format_g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view s, const std::string& where) {
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size())
    throw ParseError(where + ": cannot parse number '" + tmp + "'");
  if (!std::isfinite(v)) throw ParseError(where + ": non-finite value");
  return v;
}

template <typename Int>
Int parse_int(std::string_view s, const std::string& where) {
  Int v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ParseError(where + ": cannot parse integer '" + std::string(s) + "'");
  return v;
}

inline void check_csv_safe(const std::string& s, const std::string& what) {
  if (s.find_first_of(",\n\r\"") != std::string::npos)
    throw ValidationError(what + " '" + s + "' contains a CSV delimiter");
}

inline std::vector<std::uint8_t> encode_cohort_binary(const Cohort& cohort) {
  ByteWriter w;
  w.put_magic(kCohortMagic);
  w.put<std::uint16_t>(kCohortVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cohort.dim()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cohort.size()));
  for (const auto& s : cohort.sets()) {
    if (s.id().size() > 0xFFFF) throw ValidationError("set id too long: " + s.id());
    w.put<std::uint16_t>(static_cast<std::uint16_t>(s.id().size()));
    w.put_bytes(s.id());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    std::uint8_t flags = 0;
    if (s.coords()) flags |= kFlagCoords;
    if (s.target()) flags |= s.target()->kind == TargetKind::class_label ? kFlagClass : kFlagSurvival;
    w.put<std::uint8_t>(flags);
    if (flags & kFlagClass) w.put<std::uint32_t>(*s.target()->class_label);
    if (flags & kFlagSurvival) {
      w.put<double>(*s.target()->time);
      w.put<std::uint8_t>(*s.target()->event ? 1 : 0);
    }
    if (s.coords())
      for (Index i = 0; i < s.size(); ++i) {
        w.put<std::int32_t>((*s.coords())(i, 0));
        w.put<std::int32_t>((*s.coords())(i, 1));
      }
    const FeatureMatrix& f = s.features();
    for (Index i = 0; i < f.rows(); ++i)
      for (Index k = 0; k < f.cols(); ++k) w.put<float>(f(i, k));
  }
  return w.bytes();
}

inline Cohort decode_cohort_binary(std::span<const std::uint8_t> bytes, const std::string& what) {
  ByteReader r(bytes, what);
  r.expect_magic(kCohortMagic);
  const auto version = r.get<std::uint16_t>();
  if (version != kCohortVersion)
    throw ParseError(what + ": unsupported version " + std::to_string(version));
  const auto d = r.get<std::uint32_t>();
  const auto num_sets = r.get<std::uint32_t>();
  if (d == 0) throw ParseError(what + ": d must be >= 1");
  if (num_sets == 0) throw ParseError(what + ": cohort has no sets");

  std::vector<EmbeddingSet> sets;
  sets.reserve(num_sets);
  std::optional<std::uint32_t> max_label;
  for (std::uint32_t j = 0; j < num_sets; ++j) {
    const auto id_len = r.get<std::uint16_t>();
    std::string id = r.get_string(id_len);
    const auto n = r.get<std::uint32_t>();
    const auto flags = r.get<std::uint8_t>();
    if ((flags & kFlagClass) && (flags & kFlagSurvival))
      throw ParseError(what + ": set '" + id + "' has both class and survival flags");
    std::optional<Target> target;
    if (flags & kFlagClass) {
      const auto label = r.get<std::uint32_t>();
      target = Target::classification(label);
      max_label = std::max(max_label.value_or(0), label);
    }
    if (flags & kFlagSurvival) {
      const double t = r.get<double>();
      const auto ev = r.get<std::uint8_t>();
      if (!(t > 0.0) || !std::isfinite(t))
        throw ParseError(what + ": set '" + id + "' has invalid survival time");
      target = Target::survival(t, ev != 0);
    }
    std::optional<CoordMatrix> coords;
    if (flags & kFlagCoords) {
      CoordMatrix c(n, 2);
      for (std::uint32_t i = 0; i < n; ++i) {
        c(i, 0) = r.get<std::int32_t>();
        c(i, 1) = r.get<std::int32_t>();
      }
      coords = std::move(c);
    }
    FeatureMatrix f(n, d);
    for (std::uint32_t i = 0; i < n; ++i)
      for (std::uint32_t k = 0; k < d; ++k) {
        const float v = r.get<float>();
        if (!std::isfinite(v))
          throw ParseError(what + ": set '" + id + "' row " + std::to_string(i) +
                           ": non-finite value");
        f(i, k) = v;
      }
    try {
      sets.emplace_back(std::move(id), std::move(f), std::move(coords), target);
    } catch (const ValidationError& e) {
      throw ParseError(what + ": " + e.what());
    }
  }
  if (r.remaining() != 0) throw ParseError(what + ": trailing bytes after last set");
  std::optional<std::uint32_t> num_classes;
  if (max_label) num_classes = *max_label + 1;
  return Cohort(std::move(sets), num_classes);
}

inline void save_cohort_csv(const Cohort& cohort, const std::filesystem::path& manifest) {
  const auto dir = manifest.parent_path();
  const auto stem = manifest.stem().string();
  std::ostringstream man;
  man << "id,path,label,time,event\n";
  for (std::size_t j = 0; j < cohort.size(); ++j) {
    const auto& s = cohort[j];
    check_csv_safe(s.id(), "set id");
    const std::string rel = stem + "." + std::to_string(j) + ".csv";
    std::ostringstream out;
    out << "x,y";
    for (Index k = 0; k < s.dim(); ++k) out << ",f" << k;
    out << '\n';
    for (Index i = 0; i < s.size(); ++i) {
      if (s.coords())
        out << (*s.coords())(i, 0) << ',' << (*s.coords())(i, 1);
      else
        out << ',';
      for (Index k = 0; k < s.dim(); ++k) out << ',' << format_g9(s.features()(i, k));
      out << '\n';
    }
    write_file_text(dir / rel, out.str());

    man << s.id() << ',' << rel << ',';
    if (s.target() && s.target()->class_label) man << *s.target()->class_label;
    man << ',';
    if (s.target() && s.target()->time) man << format_g9(*s.target()->time);
    man << ',';
    if (s.target() && s.target()->event) man << (*s.target()->event ? 1 : 0);
    man << '\n';
  }
  write_file_text(manifest, man.str());
}

inline EmbeddingSet load_set_csv(const std::filesystem::path& path, std::string id,
                                 std::optional<Target> target) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("set '" + id + "': empty file");
  const auto header = split_csv_line(trim_cr(line));
  if (header.size() < 3 || header[0] != "x" || header[1] != "y")
    throw ParseError("set '" + id + "': header must start with x,y,f0");
  const auto d = static_cast<Index>(header.size() - 2);
  for (Index k = 0; k < d; ++k)
    if (header[static_cast<std::size_t>(k + 2)] != "f" + std::to_string(k))
      throw ParseError("set '" + id + "': bad feature column name at position " +
                       std::to_string(k + 2));

  std::vector<float> values;
  std::vector<std::int32_t> xy;
  bool any_coords = false, any_missing = false;
  Index row = 0;
  while (std::getline(in, line)) {
    const auto sv = trim_cr(line);
    if (sv.empty()) continue;
    const std::string where = "set '" + id + "' row " + std::to_string(row);
    const auto cells = split_csv_line(sv);
    if (static_cast<Index>(cells.size()) != d + 2)
      throw ParseError(where + ": expected " + std::to_string(d + 2) + " columns, got " +
                       std::to_string(cells.size()));
    if (cells[0].empty() != cells[1].empty())
      throw ParseError(where + ": x and y must both be present or both empty");
    if (cells[0].empty()) {
      any_missing = true;
    } else {
      any_coords = true;
      xy.push_back(parse_int<std::int32_t>(cells[0], where));
      xy.push_back(parse_int<std::int32_t>(cells[1], where));
    }
    for (Index k = 0; k < d; ++k) {
      const double v = parse_double(cells[static_cast<std::size_t>(k + 2)], where);
      const auto f = static_cast<float>(v);
      if (!std::isfinite(f)) throw ParseError(where + ": value overflows f32");
      values.push_back(f);
    }
    ++row;
  }
  if (any_coords && any_missing)
    throw ParseError("set '" + id + "': coords present on some rows only");
  if (row == 0) throw ParseError("set '" + id + "': no rows");
  FeatureMatrix f = Eigen::Map<FeatureMatrix>(values.data(), row, d);
  std::optional<CoordMatrix> coords;
  if (any_coords) coords = Eigen::Map<CoordMatrix>(xy.data(), row, 2);
  try {
    return EmbeddingSet(std::move(id), std::move(f), std::move(coords), target);
  } catch (const ValidationError& e) {
    throw ParseError(e.what());
  }
}

inline Cohort load_cohort_csv(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open " + manifest.string());
  std::string line;
  if (!std::getline(in, line) || trim_cr(line) != "id,path,label,time,event")
    throw ParseError(manifest.string() + ": manifest header must be id,path,label,time,event");
  std::vector<EmbeddingSet> sets;
  std::optional<std::uint32_t> max_label;
  Index row = 0;
  while (std::getline(in, line)) {
    const auto sv = trim_cr(line);
    if (sv.empty()) continue;
    const std::string where = manifest.string() + " row " + std::to_string(row);
    const auto cells = split_csv_line(sv);
    if (cells.size() != 5) throw ParseError(where + ": expected 5 columns");
    std::string id(cells[0]);
    std::optional<Target> target;
    if (!cells[2].empty()) {
      if (!cells[3].empty() || !cells[4].empty())
        throw ParseError(where + ": set '" + id + "' has both label and survival fields");
      const auto label = parse_int<std::uint32_t>(cells[2], where);
      target = Target::classification(label);
      max_label = std::max(max_label.value_or(0), label);
    } else if (!cells[3].empty() || !cells[4].empty()) {
      if (cells[3].empty() || cells[4].empty())
        throw ParseError(where + ": set '" + id + "' needs both time and event");
      const double t = parse_double(cells[3], where);
      const auto ev = parse_int<int>(cells[4], where);
      if (!(t > 0.0)) throw ParseError(where + ": set '" + id + "' time must be positive");
      target = Target::survival(t, ev != 0);
    }
    sets.push_back(load_set_csv(manifest.parent_path() / std::string(cells[1]), id, target));
    if (sets.back().dim() != sets.front().dim())
      throw ParseError("set '" + sets.back().id() + "': dimension mismatch, d=" +
                       std::to_string(sets.back().dim()) + " but first set has d=" +
                       std::to_string(sets.front().dim()));
    ++row;
  }
  if (sets.empty()) throw ParseError(manifest.string() + ": manifest lists no sets");
  std::optional<std::uint32_t> num_classes;
  if (max_label) num_classes = *max_label + 1;
  return Cohort(std::move(sets), num_classes);
}

}  // namespace detail

/// Writes `cohort` to `path`. For csv, `path` names the manifest and one file per
/// set is written next to it as `<stem>.<index>.csv`.
inline void save_cohort(const Cohort& cohort, const std::filesystem::path& path,
                        CohortFormat format = CohortFormat::binary) {
  if (format == CohortFormat::binary)
    detail::write_file_bytes(path, detail::encode_cohort_binary(cohort));
  else
    detail::save_cohort_csv(cohort, path);
}

inline Cohort load_cohort(const std::filesystem::path& path,
                          CohortFormat format = CohortFormat::binary) {
  if (format == CohortFormat::binary) {
    const auto bytes = detail::read_file_bytes(path);
    return detail::decode_cohort_binary(bytes, path.string());
  }
  return detail::load_cohort_csv(path);
}

}  // namespace pagg
