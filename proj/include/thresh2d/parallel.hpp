#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace thresh2d {

namespace detail {
inline std::atomic<int>& default_jobs_storage() {
    static std::atomic<int> jobs{0};
    return jobs;
}
}  // namespace detail

/// Worker count used when a call does not pass one; 0 means hardware concurrency.
inline void set_default_jobs(int jobs) { detail::default_jobs_storage() = std::max(jobs, 0); }

inline int default_jobs() {
    const int j = detail::default_jobs_storage();
    if (j > 0) return j;
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

/// Runs body(i) for i in [0, n). Each index writes only its own outputs, so the
/// result does not depend on scheduling. The first exception is rethrown.
template <typename Body>
void parallel_for(std::size_t n, const Body& body, int jobs = 0) {
    if (jobs <= 0) jobs = default_jobs();
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = n;
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace thresh2d
