#include "splitbn/runtime.hpp"

#include <malloc.h>
#include <pmmintrin.h>
#include <unistd.h>

#include <cstdlib>

namespace splitbn {

void configure_process(char** argv) {
#if defined(__x86_64__)
  if (std::getenv("OPENBLAS_CORETYPE") == nullptr && std::getenv("SPLITBN_NO_REEXEC") == nullptr) {
    const char* core = __builtin_cpu_supports("avx512f") ? "SkylakeX"
                       : __builtin_cpu_supports("avx2") ? "Haswell"
                                                        : nullptr;
    if (core != nullptr) {
      setenv("OPENBLAS_CORETYPE", core, 1);
      execv("/proc/self/exe", argv);
      // exec failed: continue with whatever OpenBLAS detected
    }
  }
#endif
#if defined(__SSE3__)
  // Gradients reaching the input layers underflow; denormal arithmetic is slow.
  _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
  _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
#endif
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

}  // namespace splitbn
