#ifndef SPLATEDIT_PARALLEL_HPP
#define SPLATEDIT_PARALLEL_HPP

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace splatedit {

/// Runs fn(worker, begin, end) over a static partition of [0, count) into
/// `workers` contiguous chunks (worker w gets chunk w). Static chunking keeps
/// results independent of scheduling; callers that reduce per-worker partials
/// must do so in worker-index order.
template <typename Fn>
void parallel_chunks(std::size_t count, int workers, Fn&& fn) {
    if (workers < 1) workers = 1;
    const std::size_t n = static_cast<std::size_t>(workers) < count
                              ? static_cast<std::size_t>(workers)
                              : (count > 0 ? count : 1);
    if (n <= 1) {
        fn(0, std::size_t{0}, count);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n);
    pool.reserve(n);
    for (std::size_t w = 0; w < n; ++w) {
        const std::size_t begin = count * w / n;
        const std::size_t end = count * (w + 1) / n;
        pool.emplace_back([&, w, begin, end] {
            try {
                fn(static_cast<int>(w), begin, end);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline int default_workers() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

} // namespace splatedit

#endif
