#include "lshg/threads.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cstdlib>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lshg {

namespace {
int g_threads = 0;
}

void init_threads() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("LSHG_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v >= 1) n = std::min<long>(v, 256);
    }
    g_threads = n;
#ifdef _OPENMP
    omp_set_num_threads(n);
#endif
    Eigen::setNbThreads(n);
}

int thread_count() {
    if (g_threads == 0) init_threads();
    return g_threads;
}

}  // namespace lshg
