#pragma once

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

namespace slidepipe {

// Runs fn(0..n-1) on `workers` threads and hands each result to `consume`
// on the calling thread, strictly in index order. In-flight results are
// bounded so early workers cannot run arbitrarily far ahead of the
// consumer. Output is identical for any worker count.
template <class Fn, class Consume>
void ordered_parallel_for(std::size_t n, unsigned workers, Fn&& fn, Consume&& consume) {
    using Result = std::invoke_result_t<Fn&, std::size_t>;

    if (n == 0) return;
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) consume(i, fn(i));
        return;
    }

    const std::size_t window = static_cast<std::size_t>(workers) * 2 + 2;

    std::mutex m;
    std::condition_variable room_cv;   // workers wait for the window to open
    std::condition_variable ready_cv;  // consumer waits for the next index
    std::map<std::size_t, Result> done;
    std::size_t next_task = 0;
    std::size_t next_emit = 0;
    bool failed = false;
    std::exception_ptr error;

    auto fail_with_current = [&] {
        {
            std::lock_guard lk(m);
            if (!failed) {
                failed = true;
                error = std::current_exception();
            }
        }
        ready_cv.notify_all();
        room_cv.notify_all();
    };

    auto worker_loop = [&] {
        for (;;) {
            std::size_t i;
            {
                std::unique_lock lk(m);
                room_cv.wait(lk, [&] { return failed || next_task >= n || next_task < next_emit + window; });
                if (failed || next_task >= n) return;
                i = next_task++;
            }
            try {
                Result r = fn(i);
                {
                    std::lock_guard lk(m);
                    done.emplace(i, std::move(r));
                }
                ready_cv.notify_all();
            } catch (...) {
                fail_with_current();
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker_loop);

    try {
        while (next_emit < n) {
            std::optional<Result> r;
            {
                std::unique_lock lk(m);
                ready_cv.wait(lk, [&] { return failed || done.count(next_emit) != 0; });
                if (failed) break;
                auto it = done.find(next_emit);
                r.emplace(std::move(it->second));
                done.erase(it);
            }
            consume(next_emit, std::move(*r));
            {
                std::lock_guard lk(m);
                ++next_emit;
            }
            room_cv.notify_all();
        }
    } catch (...) {
        fail_with_current();
    }

    room_cv.notify_all();
    ready_cv.notify_all();
    for (auto& t : pool) t.join();

    if (failed) std::rethrow_exception(error);
}

}  // namespace slidepipe
