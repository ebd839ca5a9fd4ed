#include "xcal/io.hpp"

#include "xcal/types.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace xcal {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonMonotoneTime: return "NonMonotoneTime";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::WindowTooLong: return "WindowTooLong";
    case ErrorCode::NonIntegerWindow: return "NonIntegerWindow";
    case ErrorCode::WindowExceedsCycle: return "WindowExceedsCycle";
    case ErrorCode::TooFewValues: return "TooFewValues";
    case ErrorCode::FactorizationFailed: return "FactorizationFailed";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::QOutOfRange: return "QOutOfRange";
    case ErrorCode::DegeneratePrior: return "DegeneratePrior";
    case ErrorCode::NoSamplesAccepted: return "NoSamplesAccepted";
    case ErrorCode::EmptyPosterior: return "EmptyPosterior";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::ProvenanceMismatch: return "ProvenanceMismatch";
  }
  return "UnknownError";
}

namespace io {

std::string format_double(double value) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) throw Error(ErrorCode::Io, "cannot format number");
  return std::string(buf.data(), end);
}

std::optional<double> parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
    text.remove_suffix(1);
  }
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

long CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<long>(i);
  }
  return -1;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    fields.push_back(field);
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  CsvTable table;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    if (!have_header) {
      table.header = split_line(line);
      have_header = true;
    } else {
      table.rows.push_back(split_line(line));
    }
  }
  if (!have_header) throw Error(ErrorCode::Io, "missing header row in " + path.string());
  return table;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

}  // namespace io
}  // namespace xcal
