// Deterministic parallel loops.
//
// Work items write into preassigned slots; every reduction in the library runs
// sequentially over subject order afterwards, so results do not depend on the
// worker count.
#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace gsnm {

inline int default_threads() {
    unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

// Runs fn(i) for i in [0, n). fn must only touch slot i of shared outputs.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::size_t nworkers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(nworkers);
    std::exception_ptr err;
    std::mutex err_mu;
    for (std::size_t w = 0; w < nworkers; ++w) {
        pool.emplace_back([&, w] {
            try {
                // Static block partition keeps slot access contiguous.
                std::size_t lo = n * w / nworkers;
                std::size_t hi = n * (w + 1) / nworkers;
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> g(err_mu);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace gsnm
