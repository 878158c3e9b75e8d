#pragma once

#include <functional>

namespace ot {

/// 0 = use hardware concurrency. Affects parallel_for only.
void set_threads(int n);
int threads();

/// Runs fn(i) for i in [0, n), split into contiguous chunks across threads.
/// Each index is visited exactly once, so writes to per-index slots are
/// race-free and the result is identical to a sequential loop.
void parallel_for(int n, const std::function<void(int)>& fn);

} // namespace ot
