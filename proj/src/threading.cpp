#include "cdgs/threading.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace cdgs {

struct ThreadPool::Impl {
    std::vector<std::thread> workers;
    std::mutex mutex;
    std::condition_variable wake;
    std::condition_variable done;

    // Current job, guarded by mutex; generation bumps announce new work.
    std::uint64_t generation = 0;
    std::size_t job_size = 0;
    const std::function<void(std::size_t)>* job_fn = nullptr;
    std::atomic<std::size_t> next{0};
    std::size_t block = 1;
    unsigned active = 0;
    bool stopping = false;
    std::exception_ptr error;
    std::mutex error_mutex;

    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock lock(mutex);
                wake.wait(lock, [&] { return stopping || generation != seen; });
                if (stopping)
                    return;
                seen = generation;
            }
            run_share();
            {
                std::lock_guard lock(mutex);
                if (--active == 0)
                    done.notify_all();
            }
        }
    }

    void run_share() {
        try {
            for (;;) {
                const std::size_t begin = next.fetch_add(block, std::memory_order_relaxed);
                if (begin >= job_size)
                    break;
                const std::size_t end = std::min(begin + block, job_size);
                for (std::size_t i = begin; i < end; ++i)
                    (*job_fn)(i);
            }
        } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error)
                error = std::current_exception();
            next.store(job_size); // drain remaining items
        }
    }

    void start(unsigned n) {
        workers.reserve(n);
        for (unsigned i = 0; i < n; ++i)
            workers.emplace_back([this] { worker_loop(); });
    }

    void stop() {
        {
            std::lock_guard lock(mutex);
            stopping = true;
        }
        wake.notify_all();
        for (auto& w : workers)
            w.join();
        workers.clear();
        stopping = false;
    }
};

ThreadPool& ThreadPool::instance() {
    static ThreadPool pool;
    return pool;
}

ThreadPool::ThreadPool() : impl_(new Impl) {
    unsigned n = std::thread::hardware_concurrency();
    impl_->start(n > 0 ? n - 1 : 0); // calling thread also works
}

ThreadPool::~ThreadPool() {
    impl_->stop();
    delete impl_;
}

void ThreadPool::set_threads(unsigned n) {
    if (n == 0)
        n = std::max(1u, std::thread::hardware_concurrency());
    impl_->stop();
    impl_->start(n - 1);
}

unsigned ThreadPool::threads() const {
    return static_cast<unsigned>(impl_->workers.size()) + 1;
}

void ThreadPool::for_each(std::size_t n, const std::function<void(std::size_t)>& fn) {
    if (n == 0)
        return;
    if (impl_->workers.empty() || n == 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    {
        std::lock_guard lock(impl_->mutex);
        impl_->job_size = n;
        impl_->job_fn = &fn;
        impl_->next.store(0, std::memory_order_relaxed);
        impl_->error = nullptr;
        const std::size_t per_thread = n / (impl_->workers.size() + 1);
        impl_->block = std::clamp<std::size_t>(per_thread / 4, 1, 64);
        impl_->active = static_cast<unsigned>(impl_->workers.size());
        ++impl_->generation;
    }
    impl_->wake.notify_all();
    impl_->run_share();
    std::unique_lock lock(impl_->mutex);
    impl_->done.wait(lock, [&] { return impl_->active == 0; });
    impl_->job_fn = nullptr;
    if (impl_->error)
        std::rethrow_exception(impl_->error);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    ThreadPool::instance().for_each(n, fn);
}

} // namespace cdgs
