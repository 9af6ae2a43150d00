#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace styleforge::io {

using nlohmann::json;

std::string read_file(const std::filesystem::path& path);

// Writes through a sibling temporary file and renames, so readers never see
// a half-written file.
void write_file(const std::filesystem::path& path, std::string_view content);

std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& value);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace styleforge::io
