#pragma once

#include <charconv>
#include <filesystem>
#include <string>
#include <string_view>

namespace iopfl::util {

/// Shortest round-trip decimal form; locale independent.
inline std::string num(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Fixed precision, used for human-facing tables.
inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  return std::string(buf, res.ptr);
}

/// Writes `content` to `path`, creating parent directories. Throws kIo on failure.
void write_text(const std::filesystem::path& path, std::string_view content);
std::string read_text(const std::filesystem::path& path);

}  // namespace iopfl::util
