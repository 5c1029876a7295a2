#include "vigl/log.hpp"

#include <iostream>
#include <mutex>

namespace vigl {

namespace {

std::mutex g_mutex;
LogLevel g_level = LogLevel::kInfo;

const char* tag(LogLevel level) {
  switch (level) {
    case LogLevel::kDebug: return "debug";
    case LogLevel::kInfo: return "info";
    case LogLevel::kWarning: return "warning";
    case LogLevel::kError: return "error";
  }
  return "info";
}

std::function<void(LogLevel, std::string_view)>& sink() {
  static std::function<void(LogLevel, std::string_view)> s = [](LogLevel level, std::string_view message) {
    std::cerr << "[vigl " << tag(level) << "] " << message << '\n';
  };
  return s;
}

}  // namespace

void set_log_sink(std::function<void(LogLevel, std::string_view)> s) {
  std::lock_guard lock(g_mutex);
  sink() = std::move(s);
}

void set_log_level(LogLevel level) {
  std::lock_guard lock(g_mutex);
  g_level = level;
}

void log(LogLevel level, std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (level < g_level || !sink()) return;
  sink()(level, message);
}

}  // namespace vigl
