#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace krigseq::par {

/// Number of threads a parallel loop may use (1 when built without OpenMP).
inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

/// Parallel index loop: fn(i) for i in [0, n). Iterations must be independent
/// and write only to slots they own; reductions are done serially afterwards
/// so results never depend on the thread count. Serial twins of the hot loops
/// live in serial_ref.hpp for the equivalence tests and the benchmark tool.
template <class Fn>
void for_index(std::ptrdiff_t n, Fn&& fn) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
}

}  // namespace krigseq::par
