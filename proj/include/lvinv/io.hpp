#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace lvinv::io {

/// Shortest round-trip decimal form ("%.17g"), '.' decimal separator.
std::string format_number(double x);

std::vector<std::string> split_csv_line(std::string_view line);

/// Parses a double, throwing IoError with `context` on failure.
double parse_number(const std::string& text, std::string_view context);

}  // namespace lvinv::io
