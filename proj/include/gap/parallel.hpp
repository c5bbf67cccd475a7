#pragma once

// Chunked parallel loop. Work is always split into the same chunks whatever
// the thread count, so results do not depend on the number of threads.

#include <cstddef>
#include <functional>

namespace gap {

/// Members per chunk for ensemble-parallel work.
inline constexpr std::ptrdiff_t kChunk = 64;

/// 0 means "pick from GAP_THREADS or hardware concurrency".
void set_num_threads(int n);
int num_threads();

/// Calls fn(begin, end) over [0, n) in chunks of `chunk`. Exceptions thrown
/// by any chunk are rethrown (the first one by chunk order).
void parallel_chunks(std::ptrdiff_t n, std::ptrdiff_t chunk,
                     const std::function<void(std::ptrdiff_t, std::ptrdiff_t)>& fn);

}  // namespace gap
