#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace rmab {

/// Writes through a sibling temporary file and renames it into place.
/// Refuses to replace an existing file unless `overwrite` is set.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents,
                       bool overwrite = true);

std::string read_file(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

} // namespace rmab
