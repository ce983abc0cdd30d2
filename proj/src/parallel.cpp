/*
 * parallel.cpp — chunked thread pool over an index range.
 */

#include "gmflow/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace gmflow {

namespace {
constexpr std::size_t kChunk = 64;
}

std::size_t tool_thread_count() {
    if (const char* env = std::getenv("TOOL_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1)
            return static_cast<std::size_t>(v > 64 ? 64 : v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    std::size_t n = hw == 0 ? 1 : static_cast<std::size_t>(hw);
    return n > 64 ? 64 : n;
}

void parallel_for(std::size_t count,
                  const std::function<void(std::size_t)>& body) {
    if (count == 0) return;

    const std::size_t threads =
        std::min(tool_thread_count(), (count + kChunk - 1) / kChunk);
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }

    std::atomic<std::size_t> cursor{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&]() {
        for (;;) {
            const std::size_t begin = cursor.fetch_add(kChunk);
            if (begin >= count) return;
            const std::size_t end = std::min(begin + kChunk, count);
            try {
                for (std::size_t i = begin; i < end; ++i) body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace gmflow
