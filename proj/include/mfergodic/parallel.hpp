#pragma once

#include <cstddef>
#include <functional>

namespace mfergodic {

/// Upper bound on worker threads used by library routines (>= 1).
void set_thread_cap(unsigned threads);
unsigned thread_cap();

/// Runs body(i) for i in [0, n). Work items write to their own slots, so the
/// result never depends on the thread count. If several items throw, the
/// exception of the lowest index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace mfergodic
