#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace cirl {

// Raised when a numeric routine produces non-finite values; the message
// names the offending quantity (parameter, record, iteration).
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

// Raised on malformed files; carries the 1-based line number.
class parse_error : public std::runtime_error {
 public:
  parse_error(const std::string& what, long line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

// Raised when a subcommand is missing an upstream artifact; names the
// subcommand that produces it.
class missing_artifact_error : public std::runtime_error {
 public:
  missing_artifact_error(const std::string& path, const std::string& producer)
      : std::runtime_error("missing artifact '" + path + "': run `" +
                           producer + "` first"),
        producer_(producer) {}
  const std::string& producer() const { return producer_; }

 private:
  std::string producer_;
};

// Shortest decimal that round-trips a double exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// FNV-1a, used for artifact fingerprints and cache stamps.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t seed = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline double clamp(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace cirl
