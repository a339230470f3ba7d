#include "fmanetpp/base.hpp"

#include <atomic>
#include <cstdio>
#include <thread>

namespace fmanet {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

namespace {
std::atomic<int> g_threads{0};
}

int default_threads() {
    int n = g_threads.load();
    if (n > 0) return n;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void set_default_threads(int n) { g_threads.store(n); }

void parallel_for(int n, const std::function<void(int)>& fn, int nthreads) {
    if (n <= 0) return;
    int nt = nthreads > 0 ? nthreads : default_threads();
    if (nt > n) nt = n;
    if (nt <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nt);
    std::exception_ptr err;
    std::atomic<bool> failed{false};
    for (int t = 0; t < nt; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (int i = t; i < n; i += nt) fn(i);
            } catch (...) {
                if (!failed.exchange(true)) err = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace fmanet
