// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace interpkit {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes `bytes` to `path`, creating parent directories. Throws IoError.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace interpkit
