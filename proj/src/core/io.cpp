/*
 * Copyright 2026 The Karula Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "core/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace karula::io {
namespace {

std::vector<double> parse_row(const std::string& line, const fs::path& path, int line_no) {
  std::vector<double> values;
  std::size_t start = 0;
  while (start <= line.size()) {
    const std::size_t end = line.find(',', start);
    const std::string cell = line.substr(start, end == std::string::npos ? std::string::npos : end - start);
    char* stop = nullptr;
    const double v = std::strtod(cell.c_str(), &stop);
    if (cell.empty() || stop == cell.c_str())
      throw Error(path.string() + ":" + std::to_string(line_no) + ": cannot parse number '" + cell + "'");
    values.push_back(v);
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return values;
}

std::string join_row(const Eigen::Ref<const Matrix>& row) {
  std::string out;
  for (Index k = 0; k < row.cols(); ++k) {
    if (k) out += ',';
    out += format_number(row(0, k));
  }
  return out;
}

}  // namespace

std::string format_number(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", value);
  return buf;
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_matrix_csv(const fs::path& path, const Matrix& m, const std::string& comment) {
  std::string out;
  if (!comment.empty()) out += "# " + comment + "\n";
  for (Index i = 0; i < m.rows(); ++i) out += join_row(m.row(i)) + "\n";
  write_text(path, out);
}

Matrix read_matrix_csv(const fs::path& path, std::string* comment) {
  std::istringstream in(read_text(path));
  std::string line;
  std::vector<std::vector<double>> rows;
  bool seen_comment = false;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (comment && !seen_comment) {
        *comment = line.size() > 2 ? line.substr(2) : "";
        seen_comment = true;
      }
      continue;
    }
    rows.push_back(parse_row(line, path, line_no));
    if (rows.back().size() != rows.front().size())
      throw Error(path.string() + ":" + std::to_string(line_no) + ": ragged row");
  }
  Matrix m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return m;
}

void write_client_csv(const fs::path& path, const clients::ClientData& data,
                      const std::string& comment) {
  std::string out;
  if (!comment.empty()) out += "# " + comment + "\n";
  for (Index k = 0; k < data.dim(); ++k) out += "x" + std::to_string(k) + ",";
  out += "y\n";
  Matrix joined(data.size(), data.dim() + 1);
  joined << data.x, data.y;
  for (Index i = 0; i < joined.rows(); ++i) out += join_row(joined.row(i)) + "\n";
  write_text(path, out);
}

clients::ClientData read_client_csv(const fs::path& path, std::string* comment) {
  std::istringstream in(read_text(path));
  std::string line;
  std::vector<std::vector<double>> rows;
  bool header_seen = false, comment_seen = false;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (comment && !comment_seen) {
        *comment = line.size() > 2 ? line.substr(2) : "";
        comment_seen = true;
      }
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    rows.push_back(parse_row(line, path, line_no));
    if (rows.back().size() != rows.front().size() || rows.back().size() < 2)
      throw Error(path.string() + ":" + std::to_string(line_no) + ": bad row width");
  }
  if (rows.empty()) throw Error(path.string() + ": no samples");
  const Index n = static_cast<Index>(rows.size()), d = static_cast<Index>(rows[0].size()) - 1;
  clients::ClientData data{Matrix(n, d), Vector(n)};
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < d; ++k) data.x(i, k) = rows[i][k];
    data.y(i) = rows[i][d];
  }
  return data;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw InvalidArgument("expected a JSON array of rows");
  const Index n = static_cast<Index>(j.size());
  Index p = -1;
  Matrix m;
  for (Index i = 0; i < n; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array()) throw InvalidArgument("expected each matrix row to be an array");
    if (p < 0) {
      p = static_cast<Index>(row.size());
      m.resize(n, p);
    }
    if (static_cast<Index>(row.size()) != p) throw InvalidArgument("ragged matrix rows");
    for (Index k = 0; k < p; ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

}  // namespace karula::io
