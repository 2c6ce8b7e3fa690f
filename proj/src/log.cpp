#include "gapfill/log.hpp"

#include <atomic>
#include <cstdio>

namespace gapfill::log {

namespace {
std::atomic<Level> g_level{Level::warn};

void emit(const char* tag, const std::string& msg) {
  std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
  std::fflush(stderr);
}
}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

void warn(const std::string& msg) {
  if (g_level >= Level::warn) emit("warn", msg);
}

void info(const std::string& msg) {
  if (g_level >= Level::info) emit("info", msg);
}

}  // namespace gapfill::log
