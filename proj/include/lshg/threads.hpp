#pragma once

namespace lshg {

// Applies the LSHG_THREADS cap (default: hardware concurrency) to OpenMP and
// Eigen. Call once at process start; safe to call again.
void init_threads();

int thread_count();

}  // namespace lshg
