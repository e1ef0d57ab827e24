#pragma once

#include <string>
#include <vector>

namespace resprop {

/// Full-precision, locale-independent decimal rendering ("%.17g").
std::string format_double(double v);

/// Incremental CSV assembly; every table starts with a header row.
class CsvBuilder {
 public:
  explicit CsvBuilder(std::vector<std::string> header);

  void add_row(const std::vector<std::string>& cells);
  const std::string& str() const { return out_; }

 private:
  std::size_t columns_;
  std::string out_;
};

void write_text_file(const std::string& path, const std::string& content);

}  // namespace resprop
