#pragma once

#include <cstdint>
#include <functional>

namespace seqread {

// Worker count from an explicit request, else SEQREAD_THREADS, else the
// hardware concurrency. Always at least 1.
unsigned resolve_threads(unsigned requested = 0);

// Splits [0, n) into fixed chunks and runs body(begin, end, chunk) on up to
// `threads` workers. Chunk boundaries depend only on n, never on the worker
// count, so per-chunk partial results can be reduced in chunk order.
std::int64_t chunk_count(std::int64_t n);
void parallel_chunks(std::int64_t n, unsigned threads,
                     const std::function<void(std::int64_t, std::int64_t, std::int64_t)>& body);

}  // namespace seqread
