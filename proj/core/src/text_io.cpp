#include "text_io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <system_error>

#include "trajmine/errors.hpp"

namespace trajmine::detail {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string pack_container(std::string_view magic, std::string_view header_json,
                           std::string_view blob) {
  std::string out;
  out.reserve(magic.size() + 9 + header_json.size() + blob.size());
  out.append(magic);
  out.push_back('\n');
  std::uint64_t len = header_json.size();
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(len & 0xff));
    len >>= 8;
  }
  out.append(header_json);
  out.append(blob);
  return out;
}

BinaryContainer unpack_container(std::string_view magic, std::string_view bytes) {
  const std::size_t prefix = magic.size() + 1;
  if (bytes.size() < prefix + 8 || bytes.substr(0, magic.size()) != magic ||
      bytes[magic.size()] != '\n') {
    throw DataError("bad magic: expected '" + std::string(magic) + "'");
  }
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) {
    len = (len << 8) | static_cast<unsigned char>(bytes[prefix + static_cast<std::size_t>(i)]);
  }
  if (bytes.size() < prefix + 8 + len) throw DataError("truncated container header");
  BinaryContainer c;
  c.header_json = std::string(bytes.substr(prefix + 8, len));
  c.blob = std::string(bytes.substr(prefix + 8 + len));
  return c;
}

void append_f64_le(std::string& out, std::span<const double> values) {
  for (const double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      out.push_back(static_cast<char>(bits & 0xff));
      bits >>= 8;
    }
  }
}

std::vector<double> read_f64_le(std::string_view bytes, std::size_t count, std::size_t offset) {
  if (bytes.size() < offset + 8 * count) throw DataError("truncated f64 blob");
  std::vector<double> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) {
      bits = (bits << 8) |
             static_cast<unsigned char>(bytes[offset + 8 * k + static_cast<std::size_t>(i)]);
    }
    out[k] = std::bit_cast<double>(bits);
  }
  return out;
}

}  // namespace trajmine::detail
