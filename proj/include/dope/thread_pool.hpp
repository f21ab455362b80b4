#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <queue>
#include <thread>
#include <vector>

namespace dope {

/// Fixed-size worker pool. Tasks are indexed so callers write results into
/// pre-assigned slots; aggregation order never depends on scheduling.
class ThreadPool {
 public:
  explicit ThreadPool(unsigned threads) {
    if (threads < 1) threads = 1;
    for (unsigned i = 0; i < threads; ++i)
      workers_.emplace_back([this] { run(); });
  }
  ~ThreadPool() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }
  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  unsigned size() const { return static_cast<unsigned>(workers_.size()); }

  /// Runs fn(i) for i in [0, count). Blocks until all tasks finish.
  /// Re-entrant calls from worker threads execute inline (serially).
  void parallel_for(std::size_t count, std::function<void(std::size_t)> fn) {
    if (count == 0) return;
    if (on_worker_ || size() == 1) {
      for (std::size_t i = 0; i < count; ++i) fn(i);
      return;
    }
    auto batch = std::make_shared<Batch>();
    batch->fn = std::move(fn);
    batch->count = count;
    {
      std::lock_guard lock(mu_);
      for (unsigned w = 0; w < size(); ++w)
        tasks_.push([batch] { drain(*batch); });
    }
    cv_.notify_all();
    drain(*batch);  // the calling thread chips in
    {
      std::unique_lock lock(batch->mu);
      batch->cv.wait(lock, [&] { return batch->done.load() >= batch->count; });
    }
    if (batch->error) std::rethrow_exception(batch->error);
  }

 private:
  struct Batch {
    std::function<void(std::size_t)> fn;
    std::size_t count = 0;
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    std::exception_ptr error;
    std::mutex mu;
    std::condition_variable cv;
  };

  static void drain(Batch& batch) {
    for (;;) {
      const std::size_t i = batch.next.fetch_add(1);
      if (i >= batch.count) break;
      try {
        batch.fn(i);
      } catch (...) {
        std::lock_guard lock(batch.mu);
        if (!batch.error) batch.error = std::current_exception();
      }
      if (batch.done.fetch_add(1) + 1 >= batch.count) {
        std::lock_guard lock(batch.mu);
        batch.cv.notify_all();
      }
    }
  }

  void run() {
    on_worker_ = true;
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return stopping_ || !tasks_.empty(); });
        if (stopping_ && tasks_.empty()) return;
        task = std::move(tasks_.front());
        tasks_.pop();
      }
      task();
    }
  }

  static thread_local bool on_worker_;
  std::vector<std::thread> workers_;
  std::queue<std::function<void()>> tasks_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool stopping_ = false;
};

inline thread_local bool ThreadPool::on_worker_ = false;

}  // namespace dope
