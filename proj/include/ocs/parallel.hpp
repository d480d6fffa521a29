#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ocs {

// Calls fn(i) for i in [0, count) on up to `threads` workers.  The first
// exception thrown by any call is rethrown after all workers stop.
template <class Fn>
void parallel_for(long count, int threads, Fn&& fn)
{
    if (threads <= 1 || count <= 1) {
        for (long i = 0; i < count; ++i)
            fn(i);
        return;
    }
    std::atomic<long> next{0};
    std::exception_ptr err;
    std::mutex mu;
    auto work = [&] {
        for (long i; (i = next.fetch_add(1)) < count;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lk(mu);
                if (!err)
                    err = std::current_exception();
                next = count;
            }
        }
    };
    std::vector<std::thread> pool;
    const int n = static_cast<int>(std::min<long>(threads, count));
    for (int t = 0; t < n; ++t)
        pool.emplace_back(work);
    for (auto& t : pool)
        t.join();
    if (err)
        std::rethrow_exception(err);
}

}  // namespace ocs
