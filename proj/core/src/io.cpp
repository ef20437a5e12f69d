#include "ragbias/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "ragbias/error.hpp"

namespace ragbias {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write file: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw InputError("short write: " + path.string());
}

std::vector<std::string> split_lines(std::string_view content) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= content.size()) {
    std::size_t nl = content.find('\n', start);
    if (nl == std::string_view::npos) {
      if (start < content.size()) {
        lines.emplace_back(content.substr(start));
      }
      break;
    }
    std::string_view line = content.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    start = nl + 1;
  }
  return lines;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view content,
                                                char delimiter) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool row_has_data = false;

  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
    row_has_data = false;
  };

  for (std::size_t i = 0; i < content.size(); ++i) {
    char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && field.empty()) {
      in_quotes = true;
      row_has_data = true;
    } else if (c == delimiter) {
      end_field();
      row_has_data = true;
    } else if (c == '\n') {
      if (row_has_data || !field.empty() || !row.empty()) end_row();
    } else if (c == '\r') {
      // swallowed; \n terminates the row
    } else {
      field.push_back(c);
      row_has_data = true;
    }
  }
  if (in_quotes) throw InputError("csv: unterminated quoted field");
  if (row_has_data || !field.empty() || !row.empty()) end_row();
  return rows;
}

std::string csv_escape(std::string_view field, char delimiter) {
  bool needs = field.find(delimiter) != std::string_view::npos ||
               field.find('"') != std::string_view::npos ||
               field.find('\n') != std::string_view::npos ||
               field.find('\r') != std::string_view::npos;
  if (!needs) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string csv_row(const std::vector<std::string>& fields, char delimiter) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(delimiter);
    out += csv_escape(fields[i], delimiter);
  }
  out.push_back('\n');
  return out;
}

std::string format_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  std::string s(buf);
  if (s == "-0" || s.rfind("-0.", 0) == 0) {
    // normalize negative zero renderings like "-0.000000"
    bool all_zero = true;
    for (char c : s) {
      if (c != '-' && c != '0' && c != '.') {
        all_zero = false;
        break;
      }
    }
    if (all_zero) s.erase(0, 1);
  }
  return s;
}

}  // namespace ragbias
