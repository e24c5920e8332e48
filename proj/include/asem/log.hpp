#pragma once
// Minimal stderr logger.  Level comes from the ASEM_LOG environment
// variable: debug | info | warn | error | off (default: warn).

namespace asem {

enum class LogLevel { debug = 0, info, warn, error, off };

LogLevel log_level();

void log_debug(const char* fmt, ...);
void log_info(const char* fmt, ...);
void log_warn(const char* fmt, ...);
void log_error(const char* fmt, ...);

}  // namespace asem
