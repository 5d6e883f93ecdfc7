#include "sams/log.hpp"

#include <cstdlib>
#include <iostream>

#include "sams/error.hpp"

namespace sams {

namespace {
LogLevel g_level = LogLevel::info;
}

void log_init_from_env() {
    const char* env = std::getenv("SAMS_LOG");
    if (!env) return;
    const std::string v(env);
    if (v == "error")
        g_level = LogLevel::error;
    else if (v == "info")
        g_level = LogLevel::info;
    else if (v == "debug")
        g_level = LogLevel::debug;
    else
        throw ValidationError("SAMS_LOG must be one of error/info/debug, got '" + v + "'");
}

void log_set_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log_error(const std::string& msg) { std::cerr << "[error] " << msg << "\n"; }

void log_info(const std::string& msg) {
    if (g_level >= LogLevel::info) std::cerr << "[info] " << msg << "\n";
}

void log_debug(const std::string& msg) {
    if (g_level >= LogLevel::debug) std::cerr << "[debug] " << msg << "\n";
}

}  // namespace sams
