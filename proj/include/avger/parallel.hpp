#pragma once

#include <atomic>
#include <condition_variable>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace avger {

/// Run `work` over [0, n) on `threads` workers and fold results strictly in
/// index order, so reductions are bit-deterministic regardless of scheduling
/// or thread count. Results are freed as soon as they are folded.
template <typename R>
void parallel_ordered(int n, int threads, const std::function<R(int)>& work,
                      const std::function<void(int, R&)>& fold) {
  if (n <= 0) return;
  if (threads <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) {
      R r = work(i);
      fold(i, r);
    }
    return;
  }
  threads = std::min(threads, n);
  std::vector<std::unique_ptr<R>> results(static_cast<size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<int> next{0};

  auto worker = [&]() {
    while (true) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      std::unique_ptr<R> r;
      std::exception_ptr err;
      try {
        r = std::make_unique<R>(work(i));
      } catch (...) {
        err = std::current_exception();
      }
      {
        std::lock_guard<std::mutex> lk(mu);
        results[size_t(i)] = std::move(r);
        errors[size_t(i)] = err;
      }
      cv.notify_all();
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(size_t(threads));
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);

  std::exception_ptr first_error;
  for (int i = 0; i < n; ++i) {
    std::unique_ptr<R> r;
    std::exception_ptr err;
    {
      std::unique_lock<std::mutex> lk(mu);
      cv.wait(lk, [&]() { return results[size_t(i)] != nullptr || errors[size_t(i)]; });
      r = std::move(results[size_t(i)]);
      err = errors[size_t(i)];
    }
    if (err && !first_error) first_error = err;
    if (r && !first_error) fold(i, *r);
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace avger
