#include "bvar/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace bvar {

namespace {

int resolve_cap() {
    int cap = static_cast<int>(std::thread::hardware_concurrency());
    if (cap < 1) cap = 1;
    if (const char* env = std::getenv("BVAR_THREADS")) {
        const int requested = std::atoi(env);
        if (requested >= 1 && requested < cap) cap = requested;
    }
    return cap;
}

std::atomic<int> g_cap{0};

}  // namespace

int max_threads() {
    int cap = g_cap.load(std::memory_order_relaxed);
    if (cap == 0) {
        cap = resolve_cap();
        g_cap.store(cap, std::memory_order_relaxed);
    }
    return cap;
}

void set_max_threads(int n) { g_cap.store(n < 1 ? 1 : n, std::memory_order_relaxed); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const int cap = max_threads();
    if (cap <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cap), n);
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (;;) {
                const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
                if (i >= n) return;
                fn(i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace bvar
