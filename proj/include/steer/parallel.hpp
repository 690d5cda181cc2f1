#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace steer {

// STEERLAB_WORKERS when set, otherwise the hardware thread count.
inline size_t default_workers() {
    if (const char * env = std::getenv("STEERLAB_WORKERS"); env && *env) {
        const long n = std::strtol(env, nullptr, 10);
        if (n > 0) {
            return static_cast<size_t>(n);
        }
    }
    return std::max<size_t>(1, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n). Results must be written to per-index slots so
// the outcome never depends on scheduling. The lowest-index exception wins.
template <typename Fn>
void parallel_for(size_t n, size_t workers, Fn && fn) {
    workers = std::clamp<size_t>(workers, 1, std::max<size_t>(n, 1));
    std::vector<std::exception_ptr> errors(n);
    if (workers == 1) {
        for (size_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
                break;
            }
        }
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
    }
    for (auto & e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

} // namespace steer
