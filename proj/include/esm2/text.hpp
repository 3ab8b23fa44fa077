// SPDX-License-Identifier: Apache-2.0
#pragma once

// Number <-> text helpers shared by the dataset, config and checkpoint code.
// Doubles are printed in shortest round-trip form so text artifacts are
// byte-stable and parse back to the identical value.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace esm2 {

std::string format_double(double x);
std::string format_list(const std::vector<double>& xs, char sep = ',');
std::string format_list(const std::vector<std::uint64_t>& xs, char sep = ',');

/// Strict parsers: the whole token must be consumed. Throw ValidationError.
double parse_double(std::string_view s);
std::uint64_t parse_uint(std::string_view s);
std::int64_t parse_int(std::string_view s);
bool parse_bool(std::string_view s);
std::vector<double> parse_double_list(std::string_view s, char sep = ',');
std::vector<std::uint64_t> parse_uint_list(std::string_view s, char sep = ',');

std::vector<std::string_view> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace esm2
