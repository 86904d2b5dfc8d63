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

#ifndef KARULA_CORE_IO_HPP_
#define KARULA_CORE_IO_HPP_

#include <filesystem>
#include <string>

#include <json.hpp>

#include "core/clients.hpp"
#include "core/common.hpp"

namespace karula::io {

namespace fs = std::filesystem;

/// '.' decimal point, 12 significant digits.
std::string format_number(double value);

/// Writes bytes verbatim (LF line endings), creating parent directories.
void write_text(const fs::path& path, const std::string& content);
std::string read_text(const fs::path& path);

/// Comma-separated, row-major. A non-empty `comment` is written first as
/// "# comment".
void write_matrix_csv(const fs::path& path, const Matrix& m, const std::string& comment = "");

/// Lines starting with '#' are skipped; the first one is returned through
/// `comment` when requested.
Matrix read_matrix_csv(const fs::path& path, std::string* comment = nullptr);

/// Client file: header "x0,...,x{d-1},y", one sample per line.
void write_client_csv(const fs::path& path, const clients::ClientData& data,
                      const std::string& comment = "");
clients::ClientData read_client_csv(const fs::path& path, std::string* comment = nullptr);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

}  // namespace karula::io

#endif  // KARULA_CORE_IO_HPP_
