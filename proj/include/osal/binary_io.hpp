#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace osal {

/// Little-endian float32 array files.
void write_f32_le(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32_le(const std::filesystem::path& path);

/// Whole-file read; transparently inflates gzip input.
std::vector<std::uint8_t> read_maybe_gz(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
/// Writes to a temporary sibling then renames, so readers never see partial files.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace osal
