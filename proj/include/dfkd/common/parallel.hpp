#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dfkd {

/// Thread-count control for the whole toolkit. Work is always partitioned
/// statically with each output element owned by exactly one thread, so runs
/// are bit-reproducible for a fixed thread count.
inline int& thread_count_ref() {
    static int n = 0;  // 0 = library default
    return n;
}

inline void set_threads(int n) {
    thread_count_ref() = n;
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#endif
}

inline int threads() {
#ifdef _OPENMP
    return thread_count_ref() > 0 ? thread_count_ref() : omp_get_max_threads();
#else
    return 1;
#endif
}

/// parallel_for(n, f): calls f(i) for i in [0, n) with a static partition.
template <typename F>
void parallel_for(std::size_t n, F&& f) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) f(static_cast<std::size_t>(i));
#else
    for (std::size_t i = 0; i < n; ++i) f(i);
#endif
}

}  // namespace dfkd
