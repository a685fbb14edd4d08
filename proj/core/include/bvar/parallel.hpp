#pragma once

#include <cstddef>
#include <functional>

namespace bvar {

// Worker cap, resolved once from BVAR_THREADS (falls back to the hardware
// concurrency). Results never depend on the cap: parallel loops only write
// disjoint outputs and reductions happen in a fixed order.
int max_threads();

// Override the cap (tests use this to force multi-threaded paths).
void set_max_threads(int n);

// Runs fn(i) for i in [0, n). Falls back to a serial loop for small n or a
// cap of one. fn must only touch state owned by index i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace bvar
