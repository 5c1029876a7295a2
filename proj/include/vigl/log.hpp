#pragma once

#include <functional>
#include <string_view>

namespace vigl {

enum class LogLevel { kDebug, kInfo, kWarning, kError };

/// Replaces the sink (default: stderr, info and above). Passing an empty
/// function silences logging.
void set_log_sink(std::function<void(LogLevel, std::string_view)> sink);
void set_log_level(LogLevel level);
void log(LogLevel level, std::string_view message);

inline void log_info(std::string_view m) { log(LogLevel::kInfo, m); }
inline void log_warning(std::string_view m) { log(LogLevel::kWarning, m); }

}  // namespace vigl
