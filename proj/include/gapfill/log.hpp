#pragma once

// Minimal stderr logging shared by the library and the command-line tool.

#include <string>

namespace gapfill::log {

enum class Level { quiet = 0, warn = 1, info = 2 };

void set_level(Level level);
Level level();

void warn(const std::string& msg);
void info(const std::string& msg);

}  // namespace gapfill::log
