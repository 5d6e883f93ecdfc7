#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace sams {

// Flat `key = value` text configuration, one pair per line, '#' comments.
// Typed getters record which keys were consumed; reject_unknown() then fails
// on anything left over, so misspelled keys never pass silently.
class Config {
public:
    Config() = default;
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const;

    std::string get_str(const std::string& key);
    std::string get_str(const std::string& key, const std::string& fallback);
    std::int64_t get_i64(const std::string& key);
    std::int64_t get_i64(const std::string& key, std::int64_t fallback);
    double get_f64(const std::string& key);
    double get_f64(const std::string& key, double fallback);
    bool get_bool(const std::string& key);
    bool get_bool(const std::string& key, bool fallback);
    // Comma-separated integer list, e.g. "400,400"; empty string -> empty.
    std::vector<std::int64_t> get_i64_list(const std::string& key,
                                           const std::vector<std::int64_t>& fallback);

    // Overrides or inserts a pair (CLI flags layered over the file).
    void set(const std::string& key, const std::string& value);

    void reject_unknown() const;

    const std::string& origin() const { return origin_; }

private:
    std::string raw(const std::string& key);

    std::vector<std::pair<std::string, std::string>> pairs_;
    mutable std::set<std::string> touched_;
    std::string origin_;
};

}  // namespace sams
