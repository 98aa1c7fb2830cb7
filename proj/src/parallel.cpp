#include "seqread/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace seqread {

namespace {
constexpr std::int64_t kChunkSize = 1024;
}

unsigned resolve_threads(unsigned requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("SEQREAD_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<unsigned>(v);
        } catch (const std::exception&) {
            // fall through to hardware default
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::int64_t chunk_count(std::int64_t n) { return n <= 0 ? 0 : (n + kChunkSize - 1) / kChunkSize; }

void parallel_chunks(std::int64_t n, unsigned threads,
                     const std::function<void(std::int64_t, std::int64_t, std::int64_t)>& body) {
    const std::int64_t chunks = chunk_count(n);
    if (chunks == 0) return;
    auto run_chunk = [&](std::int64_t c) {
        const std::int64_t begin = c * kChunkSize;
        body(begin, std::min(n, begin + kChunkSize), c);
    };
    const unsigned workers = static_cast<unsigned>(
        std::min<std::int64_t>(std::max(1u, threads), chunks));
    if (workers == 1) {
        for (std::int64_t c = 0; c < chunks; ++c) run_chunk(c);
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::int64_t c = next++; c < chunks; c = next++) {
                try {
                    run_chunk(c);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next = chunks;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace seqread
