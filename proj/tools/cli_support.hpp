#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pagg/pagg.hpp"

namespace pagg::cli {

/// Reads TOML (CLI11's own reader) or JSON (first non-blank char is '{').
/// Keys outside any section, and keys in the section named after the running
/// subcommand, apply to that subcommand; other sections are ignored so one file can
/// hold settings for every command.
class SubcommandConfig : public CLI::ConfigTOML {
 public:
  explicit SubcommandConfig(std::string active) : active_(std::move(active)) {}

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto first = text.find_first_not_of(" \t\r\n");
    std::vector<CLI::ConfigItem> raw;
    if (first != std::string::npos && text[first] == '{') {
      raw = from_json(text);
    } else {
      std::istringstream again(text);
      raw = CLI::ConfigTOML::from_config(again);
    }
    std::vector<CLI::ConfigItem> out;
    for (auto& item : raw) {
      if (item.parents.empty()) {
        if (item.name == active_) continue;
        item.parents = {active_};
        out.push_back(std::move(item));
      } else if (item.parents.front() == active_ && item.parents.size() == 1) {
        if (item.name == "++" || item.name == "--") continue;
        out.push_back(std::move(item));
      }
    }
    return out;
  }

 private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static std::vector<CLI::ConfigItem> from_json(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError("config: " + std::string(e.what()));
    }
    std::vector<CLI::ConfigItem> items;
    auto add = [&](std::vector<std::string> parents, const std::string& key, const nlohmann::json& v) {
      CLI::ConfigItem item;
      item.parents = std::move(parents);
      item.name = key;
      if (v.is_array())
        for (const auto& e : v) item.inputs.push_back(scalar(e));
      else
        item.inputs.push_back(scalar(v));
      items.push_back(std::move(item));
    };
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        for (const auto& [k2, v2] : value.items()) add({key}, k2, v2);
      } else {
        add({}, key, value);
      }
    }
    return items;
  }

  std::string active_;
};

/// Writes `text` to a sibling temp file, then renames it over `path`.
inline void write_atomically(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  detail::write_file_text(tmp, text);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

/// Record of one command invocation, stored next to its outputs.
struct RunManifest {
  std::string command;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  double wall_time_seconds = 0.0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["version"] = std::string(kVersion);
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["seed"] = seed;
    j["wall_time_seconds"] = wall_time_seconds;
    return j;
  }

  void write(const std::filesystem::path& path) const { write_atomically(path, to_json().dump(2) + "\n"); }
};

/// Snapshot of every long option of a subcommand (given or defaulted).
inline nlohmann::ordered_json options_snapshot(const CLI::App& sub) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    const auto& results = opt->results();
    if (!results.empty()) {
      if (opt->get_expected_max() > 1 || results.size() > 1)
        j[name] = results;
      else
        j[name] = results.front();
    } else if (!opt->get_default_str().empty()) {
      j[name] = opt->get_default_str();
    } else if (opt->get_expected_min() == 0) {
      j[name] = false;
    }
  }
  return j;
}

inline std::filesystem::path sibling(const std::filesystem::path& p, const std::string& suffix) {
  auto out = p;
  out += suffix;
  return out;
}

/// `id,label,time,event`; empty cells for absent fields.
inline std::string targets_csv(const std::vector<std::string>& ids, const std::vector<Target>& targets) {
  std::ostringstream out;
  out << "id,label,time,event\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Target& t = targets[i];
    out << ids[i] << ',';
    if (t.class_label) out << *t.class_label;
    out << ',';
    if (t.time) out << detail::format_g9(*t.time);
    out << ',';
    if (t.event) out << (*t.event ? 1 : 0);
    out << '\n';
  }
  return out.str();
}

inline std::map<std::string, Target> read_targets_csv(const std::filesystem::path& path) {
  const std::string text = detail::read_file_text(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || detail::trim_cr(line) != "id,label,time,event")
    throw ParseError(path.string() + ": expected header id,label,time,event");
  std::map<std::string, Target> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    const auto trimmed = detail::trim_cr(line);
    if (trimmed.empty()) continue;
    const auto cells = detail::split_csv_line(trimmed);
    const std::string where = path.string() + " row " + std::to_string(row);
    if (cells.size() != 4) throw ParseError(where + ": expected 4 columns");
    Target t;
    if (!cells[1].empty()) {
      t = Target::classification(detail::parse_int<std::uint32_t>(cells[1], where));
    } else if (!cells[2].empty() && !cells[3].empty()) {
      const double time = detail::parse_double(cells[2], where);
      const auto ev = detail::parse_int<int>(cells[3], where);
      try {
        t = Target::survival(time, ev != 0);
      } catch (const ValidationError& e) {
        throw ParseError(where + ": " + e.what());
      }
    } else {
      throw ParseError(where + ": row has neither a label nor time/event");
    }
    out.emplace(std::string(cells[0]), t);
  }
  return out;
}

/// Targets aligned with `embs` by set id.
inline std::vector<Target> align_targets(const std::vector<SetEmbedding>& embs,
                                         const std::map<std::string, Target>& table,
                                         const std::string& source) {
  std::vector<Target> out;
  for (const auto& e : embs) {
    const auto it = table.find(e.set_id);
    if (it == table.end()) throw ValidationError(source + ": no target for set '" + e.set_id + "'");
    out.push_back(it->second);
  }
  return out;
}

/// Characters outside [A-Za-z0-9._-] replaced by '_' for use in file names.
inline std::string file_stem(const std::string& id) {
  std::string s = id;
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')) c = '_';
  return s.empty() ? "_" : s;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace pagg::cli
