#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace epiforge::text {

/// Splits one CSV record; honours double-quoted fields containing commas.
std::vector<std::string> split_csv(const std::string& line);

std::string trim(std::string_view s);

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);

std::optional<double> parse_double(std::string_view s);
std::optional<std::int64_t> parse_int(std::string_view s);

/// Quotes a CSV field if it contains a comma, quote or newline.
std::string csv_field(const std::string& field);

}  // namespace epiforge::text
