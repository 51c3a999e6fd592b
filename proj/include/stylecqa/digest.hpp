/// @file digest.hpp
/// @brief SHA-256 helpers and line-delimited JSON I/O.

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace stylecqa {

using json = nlohmann::json;

/// Lower-case hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 of a file's contents; throws Error{IoError} if unreadable.
std::string sha256_file(const std::filesystem::path& path);

/// 64-bit FNV-1a, used to derive per-item seeds.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::vector<json> read_jsonl(const std::filesystem::path& path);

/// One compact JSON document per line, '\n' terminated, keys sorted.
std::string to_jsonl(const std::vector<json>& rows);

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);

}  // namespace stylecqa
