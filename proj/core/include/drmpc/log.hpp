#pragma once

#include <string>

namespace drmpc {

enum class LogLevel { error, info, debug };

/// Parses "error", "info" or "debug". Throws ConfigError otherwise.
LogLevel parse_log_level(const std::string& name);

/// Routes library logging to standard error at the given level.
void set_log_level(LogLevel level);

/// Reads DRMPC_LOG (default info) and applies it. Returns the level in use.
LogLevel configure_logging_from_env();

void log_error(const std::string& message);
void log_info(const std::string& message);
void log_debug(const std::string& message);

}  // namespace drmpc
