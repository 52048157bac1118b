// Process-wide FP environment: flush denormals to zero. Training in 32-bit
// produces subnormal gradients that otherwise stall the pipeline; flushing
// is deterministic and changes nothing at the tolerances this project tests.

#if defined(__SSE2__) || defined(__x86_64__)
#include <immintrin.h>
#endif

namespace dlpr {

bool enable_fast_denormals() {
#if defined(__SSE2__) || defined(__x86_64__)
  _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
  _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
  return true;
#else
  return false;
#endif
}

namespace {
const bool kDenormalsConfigured = enable_fast_denormals();
}

}  // namespace dlpr
