#include "m3dm/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace m3dm::log {
namespace {

Level parse_env() {
  const char* env = std::getenv("M3DM_LOG");
  if (env == nullptr) return Level::warn;
  const std::string v(env);
  if (v == "error" || v == "0") return Level::error;
  if (v == "info" || v == "2") return Level::info;
  if (v == "debug" || v == "3") return Level::debug;
  return Level::warn;
}

std::atomic<int>& current() {
  static std::atomic<int> lvl{static_cast<int>(parse_env())};
  return lvl;
}

const char* tag(Level l) {
  switch (l) {
    case Level::error: return "error";
    case Level::warn: return "warn";
    case Level::info: return "info";
    case Level::debug: return "debug";
  }
  return "?";
}

}  // namespace

Level level() { return static_cast<Level>(current().load()); }
void set_level(Level l) { current().store(static_cast<int>(l)); }

void write(Level l, std::string_view msg) {
  if (static_cast<int>(l) > current().load()) return;
  static std::mutex m;
  std::lock_guard lock(m);
  std::cerr << "[m3dm " << tag(l) << "] " << msg << '\n';
}

}  // namespace m3dm::log
