#include "elastic_dml/parallel.hpp"

#include <cstdlib>
#include <string>
#include <thread>

namespace elastic_dml {

namespace {
int g_requested = 0;

int env_workers() {
  const char* env = std::getenv("ELASTIC_DML_WORKERS");
  if (env == nullptr || *env == '\0') return 0;
  try {
    const int n = std::stoi(env);
    return n > 0 ? n : 0;
  } catch (...) {
    return 0;
  }
}
}  // namespace

int workers() {
  if (int n = env_workers(); n > 0) return n;
  if (g_requested > 0) return g_requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void set_workers(int n) {
  g_requested = n > 0 ? n : 0;
#ifdef _OPENMP
  omp_set_num_threads(workers());
#endif
}

}  // namespace elastic_dml
