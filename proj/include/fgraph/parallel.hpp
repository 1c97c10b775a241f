#pragma once

#include <cstddef>
#include <functional>

namespace fgraph {

// Worker cap: set_threads() if called, else FGRAPH_THREADS, else 1.
unsigned thread_count();
void set_threads(unsigned n);

// Runs fn(i) for i in [0, n) on up to thread_count() threads. Iterations must
// be independent; results are written by index so output order is fixed.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace fgraph
