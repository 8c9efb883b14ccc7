#ifndef LFNN_PARALLEL_HPP
#define LFNN_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace lfnn {

/// Runs fn(i) for i in [0, n) on up to `threads` threads. Tasks must write
/// only to disjoint state. The first exception thrown (lowest index) is
/// rethrown on the calling thread.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn &&fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        const std::size_t count = std::min(threads, n);
        pool.reserve(count - 1);
        for (std::size_t t = 1; t < count; ++t) pool.emplace_back(worker);
        worker();
    }
    for (auto &e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace lfnn

#endif  // LFNN_PARALLEL_HPP
