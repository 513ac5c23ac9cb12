#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace swintempo::text {

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);

/// Parses a complete field as a double; returns false on trailing garbage or empty input.
bool parse_double(std::string_view field, double& out);

std::string_view trim(std::string_view s);

std::vector<std::string_view> split(std::string_view line, char delimiter);

/// Reads a text file fully; throws IoError when it cannot be opened.
std::string read_file(const std::string& path);

/// Writes a text file; throws IoError on failure.
void write_file(const std::string& path, std::string_view contents);

}  // namespace swintempo::text
