#pragma once

// Campaign configuration.
//
// The file is a small TOML subset: `key = value` pairs with string, integer,
// float and boolean values, '#' comments, and one `[reviewers]` table mapping
// reviewer ids to their pre-shared access tokens.
//
//   manifest = "manifest.csv"
//   official_codes = "official.txt"
//   training_codes = "training.txt"
//   seed = 1950
//   [reviewers]
//   r1 = "token-for-r1"

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>

#include "hitl/allocation.hpp"
#include "hitl/label_grammar.hpp"
#include "hitl/review_store.hpp"

namespace hitl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using TomlValue = std::variant<std::string, std::int64_t, double, bool>;
using TomlTable = std::map<std::string, TomlValue>;

namespace detail {

inline std::string parse_toml_string(std::string_view v, std::size_t lineno) {
  const char quote = v.front();
  if (v.size() < 2 || v.back() != quote) throw ConfigError("line " + std::to_string(lineno) + ": unterminated string");
  std::string_view body = v.substr(1, v.size() - 2);
  if (quote == '\'') return std::string(body);
  std::string out;
  for (std::size_t i = 0; i < body.size(); ++i) {
    char c = body[i];
    if (c == '"') throw ConfigError("line " + std::to_string(lineno) + ": stray quote in string");
    if (c != '\\') {
      out.push_back(c);
      continue;
    }
    if (++i >= body.size()) throw ConfigError("line " + std::to_string(lineno) + ": dangling escape");
    switch (body[i]) {
      case 'n': out.push_back('\n'); break;
      case 't': out.push_back('\t'); break;
      case '\\': out.push_back('\\'); break;
      case '"': out.push_back('"'); break;
      default: throw ConfigError("line " + std::to_string(lineno) + ": unsupported escape");
    }
  }
  return out;
}

// Strips a trailing comment that is not inside a string.
inline std::string_view strip_comment(std::string_view line) {
  char quote = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quote) {
      if (c == '\\' && quote == '"') ++i;
      else if (c == quote) quote = 0;
    } else if (c == '"' || c == '\'') {
      quote = c;
    } else if (c == '#') {
      return line.substr(0, i);
    }
  }
  return line;
}

}  // namespace detail

// Parses the TOML subset into "table.key" -> value (top-level keys have no prefix).
inline TomlTable parse_toml(std::istream& in) {
  TomlTable out;
  std::string table;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    auto line = trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": bad table header");
      table = std::string(trim(line.substr(1, line.size() - 2)));
      if (table.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty table name");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key(trim(line.substr(0, eq)));
    if (key.size() >= 2 && (key.front() == '"' || key.front() == '\'')) key = detail::parse_toml_string(key, lineno);
    auto value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string full = table.empty() ? key : table + "." + key;

    TomlValue parsed;
    if (value.front() == '"' || value.front() == '\'') {
      parsed = detail::parse_toml_string(value, lineno);
    } else if (value == "true" || value == "false") {
      parsed = value == "true";
    } else {
      std::string num;
      for (char c : value)
        if (c != '_') num.push_back(c);
      std::int64_t i = 0;
      auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), i);
      if (ec == std::errc() && p == num.data() + num.size()) {
        parsed = i;
      } else {
        double d = 0;
        auto [p2, ec2] = std::from_chars(num.data(), num.data() + num.size(), d);
        if (ec2 != std::errc() || p2 != num.data() + num.size())
          throw ConfigError("line " + std::to_string(lineno) + ": cannot parse value for '" + full + "'");
        parsed = d;
      }
    }
    if (!out.emplace(full, std::move(parsed)).second)
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + full + "'");
  }
  return out;
}

struct CampaignConfig {
  std::filesystem::path base_dir;  // directory of the config file; relative paths resolve against it
  std::filesystem::path manifest;
  std::filesystem::path official_codes;
  std::filesystem::path training_codes;
  std::filesystem::path output_dir;
  std::filesystem::path images_root;
  double threshold = 0.65;
  double overlap_frac = 0.10;
  double selfdup_frac = 0.014;
  std::uint64_t seed = 0;
  std::size_t page_size = kDefaultPageSize;
  double break_threshold = kDefaultBreakThreshold;
  std::int64_t token_ttl_seconds = 0;  // 0: tokens never expire
  std::optional<std::int64_t> tokens_issued_at;  // unix seconds
  std::vector<std::string> confusion_codes;
  std::map<std::string, std::string> reviewer_tokens;  // reviewer id -> token

  std::vector<std::string> reviewers() const {
    std::vector<std::string> out;
    for (const auto& [id, token] : reviewer_tokens) out.push_back(id);
    return out;
  }
  std::filesystem::path out(const std::string& name) const { return output_dir / name; }

  CodeList load_codes() const {
    CodeList codes;
    codes.official = load_code_list(official_codes);
    codes.training = load_code_list(training_codes);
    return codes;
  }
};

inline CampaignConfig read_campaign_config(std::istream& in, const std::filesystem::path& base_dir) {
  auto table = parse_toml(in);
  CampaignConfig cfg;
  cfg.base_dir = base_dir;
  auto take = [&](const std::string& key) -> std::optional<TomlValue> {
    auto it = table.find(key);
    if (it == table.end()) return std::nullopt;
    TomlValue v = it->second;
    table.erase(it);
    return v;
  };
  auto str = [&](const std::string& key) -> std::optional<std::string> {
    auto v = take(key);
    if (!v) return std::nullopt;
    if (auto s = std::get_if<std::string>(&*v)) return *s;
    throw ConfigError("'" + key + "' must be a string");
  };
  auto num = [&](const std::string& key) -> std::optional<double> {
    auto v = take(key);
    if (!v) return std::nullopt;
    if (auto d = std::get_if<double>(&*v)) return *d;
    if (auto i = std::get_if<std::int64_t>(&*v)) return static_cast<double>(*i);
    throw ConfigError("'" + key + "' must be a number");
  };
  auto integer = [&](const std::string& key) -> std::optional<std::int64_t> {
    auto v = take(key);
    if (!v) return std::nullopt;
    if (auto i = std::get_if<std::int64_t>(&*v)) return *i;
    throw ConfigError("'" + key + "' must be an integer");
  };
  auto path = [&](const std::string& key, bool required, const std::string& fallback = "") {
    auto s = str(key);
    if (!s && required) throw ConfigError("missing required key '" + key + "'");
    std::filesystem::path p = s ? *s : fallback;
    return p.empty() ? p : (p.is_absolute() ? p : base_dir / p);
  };

  cfg.manifest = path("manifest", true);
  cfg.official_codes = path("official_codes", true);
  cfg.training_codes = path("training_codes", true);
  cfg.output_dir = path("output_dir", false, "out");
  cfg.images_root = path("images_root", false, ".");
  if (auto v = num("threshold")) cfg.threshold = *v;
  if (auto v = num("overlap_frac")) cfg.overlap_frac = *v;
  if (auto v = num("selfdup_frac")) cfg.selfdup_frac = *v;
  auto seed = integer("seed");
  if (!seed) throw ConfigError("missing required key 'seed' (no implicit randomness)");
  if (*seed < 0) throw ConfigError("'seed' must be non-negative");
  cfg.seed = static_cast<std::uint64_t>(*seed);
  if (auto v = integer("page_size")) {
    if (*v < 1) throw ConfigError("'page_size' must be >= 1");
    cfg.page_size = static_cast<std::size_t>(*v);
  }
  if (auto v = num("break_threshold")) cfg.break_threshold = *v;
  if (auto v = integer("token_ttl_seconds")) cfg.token_ttl_seconds = *v;
  cfg.tokens_issued_at = integer("tokens_issued_at");
  if (auto v = str("confusion_codes")) {
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!trim(item).empty()) cfg.confusion_codes.emplace_back(trim(item));
  }

  for (auto it = table.begin(); it != table.end();) {
    if (it->first.starts_with("reviewers.")) {
      std::string id = it->first.substr(std::string("reviewers.").size());
      auto token = std::get_if<std::string>(&it->second);
      if (!token || token->empty()) throw ConfigError("reviewer '" + id + "' needs a non-empty token string");
      if (!valid_reviewer_id(id)) throw ConfigError("invalid reviewer id '" + id + "'");
      cfg.reviewer_tokens[id] = *token;
      it = table.erase(it);
    } else {
      ++it;
    }
  }
  if (!table.empty()) throw ConfigError("unknown config key '" + table.begin()->first + "'");

  auto unit = [](double f) { return f >= 0.0 && f < 1.0; };
  if (!(cfg.threshold >= 0.0 && cfg.threshold <= 1.0)) throw ConfigError("'threshold' must be in [0,1]");
  if (!unit(cfg.overlap_frac)) throw ConfigError("'overlap_frac' must be in [0,1)");
  if (!unit(cfg.selfdup_frac)) throw ConfigError("'selfdup_frac' must be in [0,1)");
  if (!(cfg.break_threshold > 0.0)) throw ConfigError("'break_threshold' must be > 0");
  return cfg;
}

inline CampaignConfig load_campaign_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  auto base = file.has_parent_path() ? file.parent_path() : std::filesystem::path(".");
  return read_campaign_config(in, base);
}

}  // namespace hitl
