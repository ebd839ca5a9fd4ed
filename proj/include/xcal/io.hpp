#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace xcal::io {

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);
std::optional<double> parse_double(std::string_view text);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column, or -1.
  long column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
/// Writes atomically enough for our purposes: the parent directory must exist.
void write_text(const std::filesystem::path& path, std::string_view text);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace xcal::io
