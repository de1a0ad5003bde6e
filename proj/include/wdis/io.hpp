#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wdis/error.hpp"

namespace wdis {

// Throws `missing` when the file does not exist, kIo on other failures.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path, ErrorCode missing);
std::string read_text(const std::filesystem::path& path, ErrorCode missing);

// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace wdis
