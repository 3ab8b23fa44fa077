// SPDX-License-Identifier: Apache-2.0
#include "esm2/text.hpp"

#include <charconv>
#include <system_error>

#include "esm2/error.hpp"

namespace esm2 {

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string format_list(const std::vector<double>& xs, char sep) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += format_double(xs[i]);
  }
  return out;
}

std::string format_list(const std::vector<std::uint64_t>& xs, char sep) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(xs[i]);
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

namespace {

template <typename T>
T parse_number(std::string_view s, const char* kind) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  T value{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ValidationError("expected " + std::string(kind) + ", got '" +
                          std::string(s) + "'");
  }
  return value;
}

}  // namespace

double parse_double(std::string_view s) { return parse_number<double>(s, "a real number"); }
std::uint64_t parse_uint(std::string_view s) {
  return parse_number<std::uint64_t>(s, "a non-negative integer");
}
std::int64_t parse_int(std::string_view s) { return parse_number<std::int64_t>(s, "an integer"); }

bool parse_bool(std::string_view s) {
  s = trim(s);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ValidationError("expected true/false, got '" + std::string(s) + "'");
}

std::vector<double> parse_double_list(std::string_view s, char sep) {
  std::vector<double> out;
  if (trim(s).empty()) return out;
  for (auto tok : split(s, sep)) out.push_back(parse_double(tok));
  return out;
}

std::vector<std::uint64_t> parse_uint_list(std::string_view s, char sep) {
  std::vector<std::uint64_t> out;
  if (trim(s).empty()) return out;
  for (auto tok : split(s, sep)) out.push_back(parse_uint(tok));
  return out;
}

}  // namespace esm2
