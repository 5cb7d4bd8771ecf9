// Copyright 2026 The pushrec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#ifndef PUSHREC_CSV_H_
#define PUSHREC_CSV_H_

#include <string>
#include <vector>

namespace pushrec {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column, or -1.
  int Column(const std::string& name) const;
};

// Shortest decimal text that parses back to the same double.
std::string FormatNumber(double value);

std::string FormatCsv(const CsvTable& table);
// Throws std::runtime_error on ragged rows or unterminated quotes.
CsvTable ParseCsv(const std::string& text);

void WriteCsv(const CsvTable& table, const std::string& path);
CsvTable ReadCsv(const std::string& path);

}  // namespace pushrec

#endif  // PUSHREC_CSV_H_
