#pragma once

#include <exception>

namespace sgpo {

// Item-parallel loop that captures the first exception inside the region and
// rethrows it after the join (exceptions must not escape an OpenMP region).
template <typename Body>
void parallel_for_items(int n, Body&& body) {
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
#pragma omp critical(sgpo_parallel_for_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace sgpo
