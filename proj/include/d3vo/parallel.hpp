#pragma once

// Per-index kernels run either serially (the reference path kept for tests and
// benchmarks) or with OpenMP. Kernels write only to their own output slot and
// any reduction is done afterwards in index order, so both paths produce
// bit-identical results.

#include <cstddef>
#include <cstdint>

namespace d3vo {

enum class Exec { Serial, Parallel };

template <typename Fn>
void parallel_for(Exec exec, std::int64_t n, Fn&& fn) {
  if (exec == Exec::Serial || n < 2) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) fn(i);
}

/// Default execution policy used by the public entry points.
Exec default_exec();
void set_default_exec(Exec exec);

}  // namespace d3vo
