#pragma once

#include <cstddef>
#include <functional>

namespace cdgs {

/// Process-wide worker pool used by the render and backward kernels.
///
/// Work items are pulled from a shared atomic counter, so the mapping of
/// items to threads is nondeterministic; callers must write only to
/// disjoint per-item outputs and perform any reductions themselves in a
/// fixed order. All kernels in this project follow that rule, which is
/// what makes results independent of the thread count.
class ThreadPool {
public:
    static ThreadPool& instance();

    /// Resize the pool. n == 0 selects hardware concurrency.
    void set_threads(unsigned n);
    unsigned threads() const;

    /// Runs fn(i) for every i in [0, n), blocking until all items finish.
    /// Items are handed out in blocks to reduce counter contention.
    void for_each(std::size_t n, const std::function<void(std::size_t)>& fn);

    ~ThreadPool();
    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

private:
    ThreadPool();
    struct Impl;
    Impl* impl_;
};

/// Convenience wrapper over ThreadPool::instance().
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace cdgs
