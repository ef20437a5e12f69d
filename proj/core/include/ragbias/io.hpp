#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ragbias {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

// Splits into lines; tolerates trailing newline and CRLF endings.
std::vector<std::string> split_lines(std::string_view content);

// RFC 4180-style CSV: quoted fields, doubled-quote escapes, configurable
// delimiter. Each row is a vector of raw field strings.
std::vector<std::vector<std::string>> parse_csv(std::string_view content,
                                                char delimiter = ',');
std::string csv_escape(std::string_view field, char delimiter = ',');
std::string csv_row(const std::vector<std::string>& fields,
                    char delimiter = ',');

// Locale-independent fixed-precision rendering, used everywhere a number
// lands in an output file so reruns stay byte-identical.
std::string format_double(double v, int precision = 6);

}  // namespace ragbias
