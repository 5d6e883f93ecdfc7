#include "sams/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "sams/error.hpp"

namespace sams {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ',') {
            out.emplace_back(line.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

}  // namespace

std::int64_t CsvTable::find_col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<std::int64_t>(i);
    return -1;
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    CsvTable t;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!have_header) {
            if (!line.empty() && line[0] == '#') {
                t.comment = line.substr(1);
                continue;
            }
            t.header = split_fields(line);
            have_header = true;
            continue;
        }
        if (line.empty()) continue;  // tolerate one trailing newline
        auto fields = split_fields(line);
        if (fields.size() != t.header.size())
            throw ValidationError(path + ": line " + std::to_string(lineno) + " has " +
                                  std::to_string(fields.size()) + " fields, header has " +
                                  std::to_string(t.header.size()));
        t.rows.push_back(std::move(fields));
    }
    if (!have_header) throw ValidationError(path + ": empty file");
    return t;
}

void write_csv(const std::string& path, const CsvTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    std::ostringstream buf;
    if (!table.comment.empty()) buf << '#' << table.comment << '\n';
    for (std::size_t i = 0; i < table.header.size(); ++i)
        buf << (i ? "," : "") << table.header[i];
    buf << '\n';
    for (const auto& row : table.rows) {
        if (row.size() != table.header.size())
            throw Error("write_csv: row width mismatch in " + path);
        for (std::size_t i = 0; i < row.size(); ++i) buf << (i ? "," : "") << row[i];
        buf << '\n';
    }
    out << buf.str();
    if (!out) throw ValidationError("write failed for " + path);
}

double parse_double_field(const std::string& s, const std::string& context) {
    double v = 0;
    const char* begin = s.data();
    const char* end = begin + s.size();
    auto [p, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || p != end)
        throw ValidationError(context + ": not a number: '" + s + "'");
    return v;
}

std::int64_t parse_int_field(const std::string& s, const std::string& context) {
    std::int64_t v = 0;
    const char* begin = s.data();
    const char* end = begin + s.size();
    auto [p, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || p != end)
        throw ValidationError(context + ": not an integer: '" + s + "'");
    return v;
}

std::string format_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw Error("format_double failed");
    return std::string(buf, p);
}

}  // namespace sams
