#pragma once

#include <string_view>

namespace m3dm::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

/// Verbosity comes from the M3DM_LOG environment variable
/// (error|warn|info|debug or 0-3); default is warn.
Level level();
void set_level(Level l);

void write(Level l, std::string_view msg);
inline void warn(std::string_view msg) { write(Level::warn, msg); }
inline void info(std::string_view msg) { write(Level::info, msg); }
inline void debug(std::string_view msg) { write(Level::debug, msg); }

}  // namespace m3dm::log
