#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace tcl::text {

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double value);
double parse_double(std::string_view token);
long long parse_int(std::string_view token);

std::vector<std::string_view> split(std::string_view line, char sep);
std::string_view trim(std::string_view s);

}  // namespace tcl::text
