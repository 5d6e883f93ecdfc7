#include "sams/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "sams/csv.hpp"
#include "sams/error.hpp"

namespace sams {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
}

Config Config::parse_string(const std::string& text, const std::string& origin) {
    Config c;
    c.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError(origin + ": line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ValidationError(origin + ": line " + std::to_string(lineno) + ": empty key");
        for (auto& [k, v] : c.pairs_)
            if (k == key)
                throw ValidationError(origin + ": duplicate key '" + key + "'");
        c.pairs_.emplace_back(key, value);
    }
    return c;
}

bool Config::has(const std::string& key) const {
    return std::any_of(pairs_.begin(), pairs_.end(),
                       [&](const auto& p) { return p.first == key; });
}

std::string Config::raw(const std::string& key) {
    for (auto& [k, v] : pairs_)
        if (k == key) {
            touched_.insert(key);
            return v;
        }
    throw ValidationError(origin_ + ": missing required key '" + key + "'");
}

std::string Config::get_str(const std::string& key) { return raw(key); }

std::string Config::get_str(const std::string& key, const std::string& fallback) {
    return has(key) ? raw(key) : fallback;
}

std::int64_t Config::get_i64(const std::string& key) {
    return parse_int_field(raw(key), origin_ + ": key '" + key + "'");
}

std::int64_t Config::get_i64(const std::string& key, std::int64_t fallback) {
    return has(key) ? get_i64(key) : fallback;
}

double Config::get_f64(const std::string& key) {
    return parse_double_field(raw(key), origin_ + ": key '" + key + "'");
}

double Config::get_f64(const std::string& key, double fallback) {
    return has(key) ? get_f64(key) : fallback;
}

bool Config::get_bool(const std::string& key) {
    const std::string v = raw(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ValidationError(origin_ + ": key '" + key + "': expected true/false, got '" + v + "'");
}

bool Config::get_bool(const std::string& key, bool fallback) {
    return has(key) ? get_bool(key) : fallback;
}

std::vector<std::int64_t> Config::get_i64_list(const std::string& key,
                                               const std::vector<std::int64_t>& fallback) {
    if (!has(key)) return fallback;
    const std::string v = raw(key);
    std::vector<std::int64_t> out;
    if (trim(v).empty()) return out;
    std::istringstream in(v);
    std::string item;
    while (std::getline(in, item, ','))
        out.push_back(parse_int_field(trim(item), origin_ + ": key '" + key + "'"));
    return out;
}

void Config::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : pairs_)
        if (k == key) {
            v = value;
            return;
        }
    pairs_.emplace_back(key, value);
}

void Config::reject_unknown() const {
    std::vector<std::string> unknown;
    for (const auto& [k, v] : pairs_)
        if (!touched_.count(k)) unknown.push_back(k);
    if (!unknown.empty()) {
        std::string msg = origin_ + ": unknown key(s):";
        for (const auto& k : unknown) msg += " '" + k + "'";
        throw ValidationError(msg);
    }
}

}  // namespace sams
