#pragma once

#include <string>

namespace sams {

enum class LogLevel { error = 0, info = 1, debug = 2 };

// Reads SAMS_LOG from the environment ({error, info, debug}; default info).
// Throws ValidationError on an unrecognized value.
void log_init_from_env();

void log_set_level(LogLevel level);
LogLevel log_level();

void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace sams
