#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#if defined(__SSE2__) || defined(__x86_64__)
#include <immintrin.h>
#endif

namespace dlpr {

// Flush denormals on the calling thread; cheap enough for hot parallel
// regions via the thread_local guard. Subnormal gradients otherwise stall
// 32-bit training hard.
inline void ensure_thread_fp() {
#if defined(__SSE2__) || defined(__x86_64__)
  thread_local bool done = false;
  if (!done) {
    _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
    _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
    done = true;
  }
#endif
}

// Error taxonomy mirrors the CLI exit-code contract:
//   UsageError -> 2, IoError -> 3, DivergenceError -> 4, ArtifactMismatch -> 5.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct DivergenceError : Error {
  using Error::Error;
};
struct ArtifactMismatch : Error {
  using Error::Error;
};

// FNV-1a over a canonical string; used for optics-config digests.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace dlpr
