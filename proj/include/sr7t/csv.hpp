/* Copyright 2026 The sr7t Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef SR7T_CSV_HPP
#define SR7T_CSV_HPP

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sr7t {

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// RFC 4180-style table: first row is the header, quoted fields may contain
// commas, quotes ("") and newlines.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> find(const std::string& column) const;
  std::size_t column(const std::string& column) const;  // throws if absent
  const std::string& at(std::size_t row, const std::string& column) const;
  std::string get_or(std::size_t row, const std::string& column, const std::string& fallback = {}) const;
  void add_row(std::vector<std::string> row);
};

CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);
std::string to_csv(const CsvTable& table);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

std::string format_double(double v);
double parse_double(const std::string& s, const std::string& what);

}  // namespace sr7t

#endif  // SR7T_CSV_HPP
