#pragma once

// Internal helpers shared by the serializers: shortest round-trip number
// formatting, FNV-1a hashing, atomic file replacement and the binary
// "magic + JSON header + blob" container.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace trajmine::detail {

std::string format_double(double v);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

// Writes to `<path>.tmp` then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

struct BinaryContainer {
  std::string header_json;
  std::string blob;
};

// Layout: magic line ("<magic>\n"), u64 little-endian header length, header
// JSON bytes, blob bytes.
std::string pack_container(std::string_view magic, std::string_view header_json,
                           std::string_view blob);
BinaryContainer unpack_container(std::string_view magic, std::string_view bytes);

void append_f64_le(std::string& out, std::span<const double> values);
std::vector<double> read_f64_le(std::string_view bytes, std::size_t count, std::size_t offset = 0);

}  // namespace trajmine::detail
