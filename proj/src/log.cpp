#include "asem/log.hpp"

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace asem {

static LogLevel parse_level(const char* s) {
  if (!s || !*s) return LogLevel::warn;
  if (std::strcmp(s, "debug") == 0) return LogLevel::debug;
  if (std::strcmp(s, "info") == 0) return LogLevel::info;
  if (std::strcmp(s, "warn") == 0) return LogLevel::warn;
  if (std::strcmp(s, "error") == 0) return LogLevel::error;
  if (std::strcmp(s, "off") == 0) return LogLevel::off;
  std::fprintf(stderr, "[asem] unknown ASEM_LOG value '%s', using warn\n", s);
  return LogLevel::warn;
}

LogLevel log_level() {
  static const LogLevel level = parse_level(std::getenv("ASEM_LOG"));
  return level;
}

static void vlog(LogLevel lvl, const char* tag, const char* fmt, va_list ap) {
  if (lvl < log_level()) return;
  std::fprintf(stderr, "[asem %s] ", tag);
  std::vfprintf(stderr, fmt, ap);
  std::fputc('\n', stderr);
}

#define ASEM_LOG_IMPL(level, tag)            \
  void log_##level(const char* fmt, ...) {   \
    va_list ap;                              \
    va_start(ap, fmt);                       \
    vlog(LogLevel::level, tag, fmt, ap);     \
    va_end(ap);                              \
  }

ASEM_LOG_IMPL(debug, "debug")
ASEM_LOG_IMPL(info, "info")
ASEM_LOG_IMPL(warn, "warn")
ASEM_LOG_IMPL(error, "error")

#undef ASEM_LOG_IMPL

}  // namespace asem
