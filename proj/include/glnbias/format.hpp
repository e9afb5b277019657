#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace glnbias {

/// Decimal with 17 significant digits (round-trips any double).
std::string fmt_double(double v);

std::string_view trim(std::string_view s);
std::vector<std::string> split_csv(std::string_view line, char sep = ',');
double parse_double(std::string_view s);
long long parse_int(std::string_view s);

}  // namespace glnbias
