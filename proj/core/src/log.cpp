#include "drmpc/log.hpp"

#include "drmpc/common.hpp"

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <memory>

namespace drmpc {

namespace {

std::shared_ptr<spdlog::logger>& logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto l = std::make_shared<spdlog::logger>("drmpc", std::make_shared<spdlog::sinks::stderr_sink_mt>());
    l->set_pattern("[%l] %v");
    l->set_level(spdlog::level::info);
    return l;
  }();
  return instance;
}

}  // namespace

LogLevel parse_log_level(const std::string& name) {
  if (name == "error") return LogLevel::error;
  if (name == "info") return LogLevel::info;
  if (name == "debug") return LogLevel::debug;
  throw ConfigError("DRMPC_LOG: expected error, info or debug, got '" + name + "'");
}

void set_log_level(LogLevel level) {
  switch (level) {
    case LogLevel::error: logger()->set_level(spdlog::level::err); break;
    case LogLevel::info: logger()->set_level(spdlog::level::info); break;
    case LogLevel::debug: logger()->set_level(spdlog::level::debug); break;
  }
}

LogLevel configure_logging_from_env() {
  const char* env = std::getenv("DRMPC_LOG");
  const LogLevel level = env && *env ? parse_log_level(env) : LogLevel::info;
  set_log_level(level);
  return level;
}

void log_error(const std::string& message) { logger()->error(message); }
void log_info(const std::string& message) { logger()->info(message); }
void log_debug(const std::string& message) { logger()->debug(message); }

}  // namespace drmpc
