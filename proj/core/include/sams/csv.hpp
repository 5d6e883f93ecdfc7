#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sams {

// Plain comma-separated UTF-8 tables, LF line endings, no quoting. Trailing
// CR on input lines is tolerated; output is always LF.
struct CsvTable {
    std::string comment;  // leading '#' metadata line, if any, without the '#'
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;  // each row has header.size() fields

    std::int64_t nrows() const { return static_cast<std::int64_t>(rows.size()); }
    std::int64_t ncols() const { return static_cast<std::int64_t>(header.size()); }
    // Column index by name; -1 when absent.
    std::int64_t find_col(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

// Strict full-string numeric parsing; context names the file coordinate in
// error messages.
double parse_double_field(const std::string& s, const std::string& context);
std::int64_t parse_int_field(const std::string& s, const std::string& context);

// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace sams
