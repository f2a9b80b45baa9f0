#pragma once

// Key/value text documents ("key: value" per line) shared by the raw-volume
// header, marker and camera files, and pipeline configs.

#include <charconv>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "neuronav/error.hpp"

namespace neuronav {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string token;
  while (in >> token) out.push_back(token);
  return out;
}

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

template <typename Int>
std::optional<Int> parse_int(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  Int v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

/// Ordered key/value document. Lines starting with '#' are comments.
class TextDoc {
 public:
  static TextDoc parse(std::string_view text, ErrorCode on_error = ErrorCode::ParseError) {
    TextDoc doc;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      auto eol = text.find('\n', pos);
      if (eol == std::string_view::npos) eol = text.size();
      auto line = trim(text.substr(pos, eol - pos));
      ++line_no;
      pos = eol + 1;
      if (line.empty() || line.front() == '#') continue;
      auto colon = line.find(':');
      if (colon == std::string_view::npos) {
        throw Error(on_error, "line " + std::to_string(line_no) + ": expected 'key: value'");
      }
      auto key = std::string(trim(line.substr(0, colon)));
      auto value = std::string(trim(line.substr(colon + 1)));
      if (key.empty()) throw Error(on_error, "line " + std::to_string(line_no) + ": empty key");
      if (doc.values_.count(key)) {
        throw Error(on_error, "line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
      }
      doc.values_[key] = value;
      doc.order_.push_back(key);
    }
    doc.on_error_ = on_error;
    return doc;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error(on_error_, "missing key '" + key + "'");
    return it->second;
  }

  std::string str_or(const std::string& key, std::string fallback) const {
    return has(key) ? str(key) : fallback;
  }

  double number(const std::string& key) const {
    auto v = parse_double(str(key));
    if (!v) throw Error(on_error_, "key '" + key + "' is not a number");
    return *v;
  }

  double number_or(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

  std::vector<double> numbers(const std::string& key, std::size_t expected) const {
    auto tokens = split_ws(str(key));
    if (tokens.size() != expected) {
      throw Error(on_error_, "key '" + key + "' expects " + std::to_string(expected) + " values");
    }
    std::vector<double> out;
    for (const auto& t : tokens) {
      auto v = parse_double(t);
      if (!v) throw Error(on_error_, "key '" + key + "' has a non-numeric value");
      out.push_back(*v);
    }
    return out;
  }

  template <typename Int>
  Int integer(const std::string& key) const {
    auto v = parse_int<Int>(str(key));
    if (!v) throw Error(on_error_, "key '" + key + "' is not an integer");
    return *v;
  }

  const std::vector<std::string>& keys() const { return order_; }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
  ErrorCode on_error_ = ErrorCode::ParseError;
};

}  // namespace neuronav
