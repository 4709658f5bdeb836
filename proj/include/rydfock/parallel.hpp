#pragma once

#include <cstddef>
#include <exception>
#include <vector>

namespace rydfock {

/// Worker threads for trajectory fan-out: RYDFOCK_WORKERS if set and
/// positive, otherwise the number of available processors.
int worker_count();

/// Calls body(i) for i in [0, n) across the worker pool. Each index must write
/// only its own output slot. The exception from the lowest failing index is
/// rethrown after the loop.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
    std::vector<std::exception_ptr> errors(n);
    const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1) num_threads(worker_count())
    for (long long i = 0; i < count; ++i) {
        try {
            body(static_cast<std::size_t>(i));
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Serial reference for parallel_for.
template <class Body>
void serial_for(std::size_t n, Body&& body) {
    for (std::size_t i = 0; i < n; ++i) body(i);
}

}  // namespace rydfock
