#pragma once
// Shared error types and small numeric/string helpers.

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace asem {

// Invalid request from the caller: bad dimensions, malformed config, ...
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Failure while executing a valid request: I/O, numerical breakdown,
// exhausted data, non-finite values.
struct RuntimeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violation of a hard result invariant that callers treat as fatal.
struct InvariantError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string strprintf(const char* fmt, ...);

[[noreturn]] void fail_config(const char* fmt, ...);
[[noreturn]] void fail_runtime(const char* fmt, ...);

// Formats with 17 significant digits; parses back to the identical double.
std::string fmt_g17(double x);

// FNV-1a, used to stamp outputs with a hash of the canonical config text.
std::uint64_t hash_fnv1a(std::string_view s);

double dot(std::span<const double> a, std::span<const double> b);
double sq_norm(std::span<const double> a);
double sq_distance(std::span<const double> a, std::span<const double> b);

double mean(std::span<const double> v);
double variance(std::span<const double> v);  // unbiased
double median(std::vector<double> v);        // by copy: partial_sort

// Least-squares slope of y against x.
double ls_slope(std::span<const double> x, std::span<const double> y);

// Spearman rank correlation (average ranks on ties).
double spearman(std::span<const double> x, std::span<const double> y);

// Runs fn(0..n-1) on `workers` threads (0 = hardware concurrency).  The
// first exception thrown by any item is rethrown on the calling thread.
void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t)>& fn);

}  // namespace asem
