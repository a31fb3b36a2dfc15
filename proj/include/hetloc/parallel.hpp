/*
 * Copyright 2026 The HetLoc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace hetloc {

// Worker count: HETLOC_THREADS if set (>= 1), else hardware concurrency.
inline int worker_count() {
  static const int n = [] {
    if (const char* env = std::getenv("HETLOC_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v >= 1) return static_cast<int>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return n;
}

namespace detail {

inline bool& inside_pool() {
  thread_local bool flag = false;
  return flag;
}

// Persistent pool; work is split into statically indexed chunks, so results
// never depend on scheduling or thread count.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool(worker_count());
    return pool;
  }

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  // Runs fn(chunk) for chunk in [0, chunks); the calling thread participates.
  // Nested calls from inside pool work degrade to serial execution.
  void run(int chunks, const std::function<void(int)>& fn) {
    if (chunks <= 1 || size() == 1 || inside_pool()) {
      const bool was = inside_pool();
      inside_pool() = true;
      for (int c = 0; c < chunks; ++c) fn(c);
      inside_pool() = was;
      return;
    }
    std::unique_lock<std::mutex> lock(mutex_);
    fn_ = &fn;
    next_chunk_ = 0;
    chunks_ = chunks;
    pending_ = chunks;
    ++generation_;
    lock.unlock();
    wake_.notify_all();
    inside_pool() = true;
    work_loop();
    inside_pool() = false;
    lock.lock();
    done_.wait(lock, [&] { return pending_ == 0; });
    fn_ = nullptr;
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      stop_ = true;
    }
    wake_.notify_all();
    for (auto& t : workers_) t.join();
  }

 private:
  explicit ThreadPool(int threads) {
    for (int i = 0; i < threads - 1; ++i)
      workers_.emplace_back([this] { worker_main(); });
  }

  void work_loop() {
    while (true) {
      int chunk;
      {
        std::lock_guard<std::mutex> lock(mutex_);
        if (next_chunk_ >= chunks_) return;
        chunk = next_chunk_++;
      }
      (*fn_)(chunk);
      std::lock_guard<std::mutex> lock(mutex_);
      if (--pending_ == 0) done_.notify_all();
    }
  }

  void worker_main() {
    inside_pool() = true;
    std::uint64_t seen = 0;
    while (true) {
      {
        std::unique_lock<std::mutex> lock(mutex_);
        wake_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      work_loop();
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable done_;
  const std::function<void(int)>* fn_ = nullptr;
  int next_chunk_ = 0;
  int chunks_ = 0;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace detail

// Runs fn(i) for i in [0, chunks) on the pool. The chunk decomposition is
// chosen by the caller (typically a channel count), so outputs written to
// disjoint chunk slices are bit-identical for any HETLOC_THREADS value.
template <typename Fn>
void parallel_chunks(int chunks, Fn&& fn) {
  if (chunks <= 0) return;
  std::function<void(int)> task = [&fn](int c) { fn(c); };
  detail::ThreadPool::instance().run(chunks, task);
}

// Applies fn(begin, end) over a fixed partition of [0, n) into ceil(n/grain)
// ranges; chunk boundaries depend only on (n, grain), never on thread count.
template <typename Fn>
void parallel_for(std::int64_t n, std::int64_t grain, Fn&& fn) {
  if (n <= 0) return;
  const std::int64_t g = std::max<std::int64_t>(1, grain);
  const int chunks = static_cast<int>((n + g - 1) / g);
  std::function<void(int)> task = [&](int c) {
    const std::int64_t b = c * g;
    const std::int64_t e = std::min<std::int64_t>(n, b + g);
    fn(b, e);
  };
  detail::ThreadPool::instance().run(chunks, task);
}

}  // namespace hetloc
