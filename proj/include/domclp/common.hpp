#pragma once

// Shared aliases, error types and seeded RNG substreams used by every module.

#include <Eigen/Dense>

#include <cstdint>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace domclp {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Vectors whose norm falls at or below this floor are treated as zero by
// every L2-normalization in the library (projection rows, centroids).
inline constexpr double kNormFloor = 1e-12;

// Bad user input: config values, malformed files, mismatched shapes.
// The CLI maps this family to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed on-disk data (CSV/JSON). Messages carry a line number when known.
struct ParseError : ConfigError {
  using ConfigError::ConfigError;
};

// Non-finite values where finite ones are required (diverged training and
// the like). The CLI maps this to exit code 3.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Seeded substreams
//
// All randomness flows from one user seed. Independent concerns (data
// generation, weight init, training order, probes, per-epoch clustering)
// draw from named substreams so that adding draws to one concern never
// shifts another. Substream seeds are derived by hashing the master seed
// with the stream name and up to three integer salts.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t substream_seed(std::uint64_t seed, std::string_view name,
                                    std::uint64_t a = 0, std::uint64_t b = 0,
                                    std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(seed ^ fnv1a64(name));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  return h;
}

inline std::mt19937_64 substream_rng(std::uint64_t seed, std::string_view name,
                                     std::uint64_t a = 0, std::uint64_t b = 0,
                                     std::uint64_t c = 0) {
  return std::mt19937_64(substream_seed(seed, name, a, b, c));
}

// mt19937_64 state round-trips through its stream operators; used to make
// training checkpoints resume mid-stream.
inline std::string rng_state_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline std::mt19937_64 rng_from_state(const std::string& state) {
  std::mt19937_64 rng;
  std::istringstream is(state);
  is >> rng;
  if (is.fail()) throw ParseError("invalid RNG state string");
  return rng;
}

// ---------------------------------------------------------------------------
// Small numeric helpers
// ---------------------------------------------------------------------------

// Shortest decimal form that round-trips a double exactly.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

inline double parse_double(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw ParseError("not a number: \"" + s + "\"");
  return v;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty vector");
  std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

inline void check_finite(const Mat& m, const char* what) {
  if (!m.allFinite())
    throw NumericalError(std::string(what) + " contains non-finite values");
}

}  // namespace domclp
