#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace elastic_dml {

/// Serial kernels are the reference implementations kept for testing;
/// parallel kernels must reproduce them bit for bit.
enum class Exec { serial, parallel };

/// Number of worker threads: ELASTIC_DML_WORKERS if set, otherwise the
/// value passed to set_workers(), otherwise available cores.
int workers();
void set_workers(int n);

inline int thread_index() {
#ifdef _OPENMP
  return omp_get_thread_num();
#else
  return 0;
#endif
}

inline bool in_parallel_region() {
#ifdef _OPENMP
  return omp_in_parallel() != 0;
#else
  return false;
#endif
}

}  // namespace elastic_dml
