#pragma once

// Reviewer label grammar.
//
// A reviewer types a label into a correction box. The accepted symbols are:
//
//   531            a single occupation code (1-4 digits) or a sentinel
//                  ("bbb" blank image, "ttt" free text; case-insensitive)
//   531@533        alternative readings, any '@' means the reviewer is unsure
//   ??             nothing could be read
//   1??8           "??" inside a code masks one unreadable character
//   531 %533%      new code followed by the crossed-out original
//
// See GRAMMAR.md for the EBNF.

#include <algorithm>
#include <cctype>
#include <compare>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace hitl {

inline constexpr std::size_t kMaxCodeLength = 4;
inline constexpr std::string_view kBlankCode = "bbb";
inline constexpr std::string_view kTextCode = "ttt";

inline std::string_view trim(std::string_view s) {
  auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

// An occupation code. Complete codes are all-digit or a lowercase sentinel.
// Partial codes only come out of the label parser and carry '?' at each
// unreadable position.
class Code {
 public:
  // Accepts complete codes only; sentinels are case-folded.
  static std::optional<Code> from_string(std::string_view s) {
    s = trim(s);
    if (s.empty() || s.size() > kMaxCodeLength) return std::nullopt;
    if (std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      return Code(std::string(s));
    }
    std::string lower(s);
    for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower == kBlankCode || lower == kTextCode) return Code(std::move(lower));
    return std::nullopt;
  }

  static Code partial(std::string masked) { return Code(std::move(masked)); }

  const std::string& str() const { return text_; }
  bool is_sentinel() const { return text_ == kBlankCode || text_ == kTextCode; }
  bool is_partial() const { return text_.find('?') != std::string::npos; }
  bool is_numeric() const {
    return std::all_of(text_.begin(), text_.end(), [](char c) { return c >= '0' && c <= '9'; });
  }

  std::vector<std::size_t> masked_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < text_.size(); ++i)
      if (text_[i] == '?') out.push_back(i);
    return out;
  }

  // Text as typed by a reviewer: masked characters render as "??".
  std::string format() const {
    std::string out;
    for (char c : text_) {
      if (c == '?')
        out += "??";
      else
        out.push_back(c);
    }
    return out;
  }

  auto operator<=>(const Code&) const = default;

 private:
  explicit Code(std::string text) : text_(std::move(text)) {}
  std::string text_;
};

struct ParsedLabel {
  std::vector<Code> candidates;  // empty only for the pure "??" form
  bool uncertain = false;
  std::optional<std::string> replaced_old;
  std::string raw;

  bool fully_unknown() const { return candidates.empty(); }
  bool partial() const {
    return std::any_of(candidates.begin(), candidates.end(), [](const Code& c) { return c.is_partial(); });
  }
  // Masked character positions, one entry per candidate.
  std::vector<std::vector<std::size_t>> partial_mask() const {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& c : candidates) out.push_back(c.masked_positions());
    return out;
  }
  bool certain_singleton() const { return !uncertain && candidates.size() == 1 && !candidates[0].is_partial(); }

  // Structural equality; the verbatim input is not compared.
  friend bool operator==(const ParsedLabel& a, const ParsedLabel& b) {
    return a.candidates == b.candidates && a.uncertain == b.uncertain && a.replaced_old == b.replaced_old;
  }
};

struct ParseError {
  std::size_t position = 0;
  std::string reason;
};

class ParseResult {
 public:
  ParseResult(ParsedLabel label) : value_(std::move(label)) {}
  ParseResult(ParseError error) : value_(std::move(error)) {}

  bool ok() const { return std::holds_alternative<ParsedLabel>(value_); }
  explicit operator bool() const { return ok(); }
  const ParsedLabel& value() const { return std::get<ParsedLabel>(value_); }
  const ParseError& error() const { return std::get<ParseError>(value_); }
  const ParsedLabel* operator->() const { return &value(); }

 private:
  std::variant<ParsedLabel, ParseError> value_;
};

namespace detail {

class LabelParser {
 public:
  explicit LabelParser(std::string_view raw) : s_(raw) {}

  ParseResult run() {
    ParsedLabel label;
    label.raw = std::string(s_);
    skip_ws();
    if (at_end()) return fail("empty label");

    bool bare_unknown = false;
    for (;;) {
      std::size_t token_start = pos_;
      auto token = parse_token();
      if (!token) return std::move(*error_);
      if (token->str() == "?") {
        // A lone "??" token is only meaningful as the whole label.
        if (!label.candidates.empty() || peek() == '@') {
          return fail_at(token_start, "\"??\" cannot be an alternative");
        }
        bare_unknown = true;
      } else if (token->is_partial() && !token->is_numeric_partial()) {
        return fail_at(token_start, "masked code needs at least one digit");
      } else {
        label.candidates.push_back(token->code);
      }
      if (peek() != '@') break;
      ++pos_;
      if (at_end() || peek() == ' ' || peek() == '\t') return fail("missing code after '@'");
    }

    std::size_t before_ws = pos_;
    skip_ws();
    if (!at_end()) {
      if (peek() != '%') {
        if (pos_ == before_ws) return fail(unexpected());
        return fail("more than one code in the box");
      }
      std::size_t open = pos_;
      ++pos_;
      std::size_t close = s_.find('%', pos_);
      if (close == std::string_view::npos) return fail_at(open, "unterminated %...% section");
      if (close == pos_) return fail_at(open, "empty %...% section");
      label.replaced_old = std::string(s_.substr(pos_, close - pos_));
      pos_ = close + 1;
      skip_ws();
      if (!at_end()) return fail("text after %...% section");
    }

    if (bare_unknown) {
      label.uncertain = true;
    } else {
      bool masked = label.partial();
      bool old_doubt = label.replaced_old &&
                       (label.replaced_old->find("??") != std::string::npos ||
                        label.replaced_old->find('@') != std::string::npos);
      label.uncertain = masked || label.candidates.size() > 1 || old_doubt;
    }
    return label;
  }

 private:
  struct Token {
    Code code;
    bool has_digit = false;
    const std::string& str() const { return code.str(); }
    bool is_partial() const { return code.is_partial(); }
    bool is_numeric_partial() const { return has_digit; }
  };

  bool at_end() const { return pos_ >= s_.size(); }
  char peek() const { return at_end() ? '\0' : s_[pos_]; }
  void skip_ws() {
    while (!at_end() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\r' || s_[pos_] == '\n')) ++pos_;
  }
  std::string unexpected() const {
    unsigned char c = static_cast<unsigned char>(peek());
    if (c >= 0x20 && c < 0x7f) return std::string("unexpected character '") + static_cast<char>(c) + "'";
    char buf[32];
    std::snprintf(buf, sizeof buf, "unexpected byte 0x%02x", c);
    return buf;
  }
  ParseResult fail(std::string reason) { return fail_at(pos_, std::move(reason)); }
  ParseResult fail_at(std::size_t at, std::string reason) { return ParseError{at, std::move(reason)}; }

  std::optional<Token> parse_token() {
    std::size_t start = pos_;
    if (std::isalpha(static_cast<unsigned char>(peek()))) {
      while (!at_end() && std::isalpha(static_cast<unsigned char>(peek()))) ++pos_;
      if (auto code = Code::from_string(s_.substr(start, pos_ - start)); code && code->is_sentinel()) {
        if (std::isdigit(static_cast<unsigned char>(peek())) || peek() == '?') {
          return token_error(pos_, unexpected());
        }
        return Token{*code, false};
      }
      return token_error(start, "not a code: '" + std::string(s_.substr(start, pos_ - start)) + "'");
    }
    std::string text;
    bool digit = false;
    for (;;) {
      char c = peek();
      if (c >= '0' && c <= '9') {
        text.push_back(c);
        digit = true;
        ++pos_;
      } else if (c == '?') {
        if (pos_ + 1 >= s_.size() || s_[pos_ + 1] != '?') return token_error(pos_, "single '?' (use \"??\")");
        text.push_back('?');
        pos_ += 2;
      } else {
        break;
      }
      if (text.size() > kMaxCodeLength) return token_error(start, "code longer than 4 characters");
    }
    if (text.empty()) {
      if (at_end()) return token_error(pos_, "missing code");
      return token_error(pos_, unexpected());
    }
    char c = peek();
    if (std::isalpha(static_cast<unsigned char>(c))) return token_error(pos_, unexpected());
    if (!digit && text != "?") return Token{Code::partial(text), false};
    return Token{Code::partial(text), digit};
  }

  std::optional<Token> token_error(std::size_t at, std::string reason) {
    error_ = ParseError{at, std::move(reason)};
    return std::nullopt;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  std::optional<ParseResult> error_;
};

}  // namespace detail

inline ParseResult parse_label(std::string_view raw) { return detail::LabelParser(raw).run(); }

inline std::string format_label(const ParsedLabel& label) {
  std::string out;
  if (label.fully_unknown()) {
    out = "??";
  } else {
    for (std::size_t i = 0; i < label.candidates.size(); ++i) {
      if (i) out.push_back('@');
      out += label.candidates[i].format();
    }
  }
  if (label.replaced_old) out += " %" + *label.replaced_old + "%";
  return out;
}

// Sorted, deduplicated alternatives. The uncertainty flag is kept even when
// deduplication leaves a single candidate: the reviewer did signal doubt.
inline ParsedLabel normalize(const ParsedLabel& label) {
  ParsedLabel out = label;
  std::sort(out.candidates.begin(), out.candidates.end());
  out.candidates.erase(std::unique(out.candidates.begin(), out.candidates.end()), out.candidates.end());
  out.raw = format_label(out);
  return out;
}

// Returns the shared code when one label is a certain singleton and the
// other label lists that code among its candidates.
inline std::optional<Code> resolve_pair(const ParsedLabel& a, const ParsedLabel& b) {
  auto contains = [](const ParsedLabel& l, const Code& c) {
    return std::find(l.candidates.begin(), l.candidates.end(), c) != l.candidates.end();
  };
  if (a.certain_singleton() && contains(b, a.candidates[0])) return a.candidates[0];
  if (b.certain_singleton() && contains(a, b.candidates[0])) return b.candidates[0];
  return std::nullopt;
}

struct CodeList {
  std::set<Code> official;
  std::set<Code> training;

  bool in_official(const Code& c) const { return c.is_sentinel() || official.contains(c); }
  bool in_training(const Code& c) const { return c.is_sentinel() || training.contains(c); }
};

class CodeListError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One code per line; '#' starts a comment; blank lines ignored.
inline std::set<Code> read_code_list(std::istream& in, const std::string& source = "<stream>") {
  std::set<Code> codes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto text = trim(line);
    if (text.empty()) continue;
    auto code = Code::from_string(text);
    if (!code) {
      throw CodeListError(source + ":" + std::to_string(lineno) + ": not a code: '" + std::string(text) + "'");
    }
    codes.insert(*code);
  }
  return codes;
}

inline std::set<Code> load_code_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CodeListError("cannot open code list " + path.string());
  return read_code_list(in, path.string());
}

enum class LabelClass { CleanCode, Uncertain, Unlabelable, Invalid };

inline std::string_view to_string(LabelClass c) {
  switch (c) {
    case LabelClass::CleanCode: return "clean";
    case LabelClass::Uncertain: return "uncertain";
    case LabelClass::Unlabelable: return "unlabelable";
    case LabelClass::Invalid: return "invalid";
  }
  return "invalid";
}

inline LabelClass classify(const ParseResult& parsed, const CodeList* codes, bool strict) {
  if (!parsed) return LabelClass::Invalid;
  const auto& label = parsed.value();
  if (label.fully_unknown()) return LabelClass::Unlabelable;
  if (label.uncertain) return LabelClass::Uncertain;
  if (label.candidates.size() != 1) return LabelClass::Invalid;
  if (strict && codes && !codes->in_official(label.candidates[0])) return LabelClass::Invalid;
  return LabelClass::CleanCode;
}

// Total: every byte string maps to exactly one class.
inline LabelClass classify_raw(std::string_view raw, const CodeList& codes, bool strict = false) {
  return classify(parse_label(raw), &codes, strict);
}

inline LabelClass classify_raw(std::string_view raw) { return classify(parse_label(raw), nullptr, false); }

// The single certain code a label denotes, if any.
inline std::optional<Code> clean_code(std::string_view raw) {
  auto parsed = parse_label(raw);
  if (classify(parsed, nullptr, false) != LabelClass::CleanCode) return std::nullopt;
  return parsed->candidates[0];
}

}  // namespace hitl
