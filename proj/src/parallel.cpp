#include "gap/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace gap {

namespace {
std::atomic<int> g_threads{0};

int resolve_default() {
    if (const char* env = std::getenv("GAP_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}
}  // namespace

void set_num_threads(int n) { g_threads = n > 0 ? n : 0; }

int num_threads() {
    const int n = g_threads.load();
    return n > 0 ? n : resolve_default();
}

void parallel_chunks(std::ptrdiff_t n, std::ptrdiff_t chunk,
                     const std::function<void(std::ptrdiff_t, std::ptrdiff_t)>& fn) {
    if (n <= 0) return;
    chunk = std::max<std::ptrdiff_t>(1, chunk);
    const std::ptrdiff_t n_chunks = (n + chunk - 1) / chunk;
    const int workers = static_cast<int>(std::min<std::ptrdiff_t>(num_threads(), n_chunks));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_chunks));
    auto run = [&](std::ptrdiff_t c) {
        try {
            fn(c * chunk, std::min(n, (c + 1) * chunk));
        } catch (...) {
            errors[static_cast<std::size_t>(c)] = std::current_exception();
        }
    };
    if (workers <= 1) {
        for (std::ptrdiff_t c = 0; c < n_chunks; ++c) run(c);
    } else {
        std::atomic<std::ptrdiff_t> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::ptrdiff_t c; (c = next.fetch_add(1)) < n_chunks;) run(c);
            });
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace gap
