#pragma once

#include <cstddef>

namespace ivpb {

/// Worker count for cell loops: IVPB_THREADS if set to a positive integer,
/// otherwise the hardware concurrency.
int thread_count();

/// Runs body(i) for i in [0, n) on thread_count() threads with a static
/// partition. Iterations must be independent; results do not depend on the
/// thread count.
template <class Body>
void parallel_for(std::size_t n, Body&& body);

} // namespace ivpb

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace ivpb {

template <class Body>
void parallel_for(std::size_t n, Body&& body)
{
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                const std::size_t lo = n * w / workers, hi = n * (w + 1) / workers;
                for (std::size_t i = lo; i < hi; ++i)
                    body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool)
        t.join();
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

} // namespace ivpb
