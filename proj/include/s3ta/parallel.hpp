#pragma once

#include <cstddef>
#include <functional>

namespace s3ta {

/// Upper bound on worker threads used by parallel_for (the CLI's --threads).
void set_max_threads(int n);
int max_threads();

/// Splits [0, n) into at most max_threads() contiguous chunks and runs
/// fn(begin, end, chunk_index) for each, blocking until all finish. Chunk
/// boundaries depend only on n and the thread cap. The first exception
/// thrown by a worker is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t, int)>& fn);

/// Number of chunks parallel_for will use for n items.
int parallel_chunks(std::size_t n);

}  // namespace s3ta
