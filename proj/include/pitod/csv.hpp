#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pitod {

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);
double parse_double(std::string_view text);
std::int64_t parse_int(std::string_view text);

std::vector<std::string> split_csv_line(std::string_view line);

/// Header plus string cells. Lines starting with '#' before the header are
/// kept as comments.
struct CsvTable {
  std::vector<std::string> comments;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws std::out_of_range if absent.
  std::size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

/// Writes to a temporary sibling and renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view content);

/// Accumulates CSV text row by row.
class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header);

  CsvWriter& comment(std::string_view text);
  CsvWriter& cell(std::string_view text);
  CsvWriter& cell(double value);
  CsvWriter& cell(std::int64_t value);
  CsvWriter& cell(std::uint64_t value);
  CsvWriter& cell(int value) { return cell(static_cast<std::int64_t>(value)); }
  CsvWriter& cell(bool value) { return cell(std::int64_t{value ? 1 : 0}); }
  CsvWriter& end_row();

  const std::string& str() const { return text_; }
  void save(const std::filesystem::path& path) const { atomic_write(path, text_); }

 private:
  std::string comments_;
  std::string text_;
  bool row_open_ = false;
};

/// 64-bit FNV-1a digest, hex encoded.
std::string fnv1a_hex(std::string_view data);
std::string file_digest(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);

}  // namespace pitod
