#pragma once

namespace splitbn {

/// Process setup for the executables; call first thing in main().
///
/// OpenBLAS picks its kernels when the library loads and misdetects some
/// virtualized CPUs as pre-AVX. When OPENBLAS_CORETYPE is unset and the CPU
/// supports AVX-512 (or AVX2), this sets it and re-executes the program, so
/// it may not return on the first call. It also flushes denormals to zero and
/// keeps freed memory in the heap, since training reallocates the same large
/// activations every step.
void configure_process(char** argv);

}  // namespace splitbn
