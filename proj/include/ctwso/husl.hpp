#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "ctwso/windowing.hpp"

namespace ctwso {

// HUSL slice file, all integers little-endian:
//   offset 0   4 bytes  "HUSL"
//   offset 4   u16      version (1)
//   offset 6   u32      width
//   offset 10  u32      height
//   offset 14  i16[width*height]  HU values, row-major
inline constexpr std::uint16_t kHuslVersion = 1;

std::string encode_husl(const HuSlice& img);

/// Decodes a HUSL buffer. Pixels outside the recorded HU range are clamped and
/// counted in *clamped when provided.
HuSlice decode_husl(const std::string& bytes, std::size_t* clamped = nullptr);

/// Pixels are rounded to the nearest integer HU.
void write_husl(const std::filesystem::path& path, const HuSlice& img);
HuSlice read_husl(const std::filesystem::path& path, std::size_t* clamped = nullptr);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace ctwso
