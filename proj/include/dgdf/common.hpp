#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dgdf {

#define DGDF_VERSION_STRING "dgdf-0.1.0"

struct error : std::runtime_error {
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dimension / shape violations (conv channel mismatch, group count, ...).
struct shape_error : error {
  explicit shape_error(const std::string& msg) : error(msg) {}
};

// Bad parameter values (even kernel size, quality out of range, ...).
struct value_error : error {
  explicit value_error(const std::string& msg) : error(msg) {}
};

// File and decode failures.
struct io_error : error {
  explicit io_error(const std::string& msg) : error(msg) {}
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw value_error(msg);
}
inline void require_shape(bool ok, const std::string& msg) {
  if (!ok) throw shape_error(msg);
}

// ---------------------------------------------------------------- threading

namespace detail {

class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int num_threads() const { return num_threads_; }

  void set_num_threads(int n) {
    std::lock_guard<std::mutex> lk(api_mutex_);
    stop_workers();
    num_threads_ = n < 1 ? 1 : n;
    start_workers();
  }

  // Runs chunk_fn(0..nchunks-1); the calling thread participates. Nested
  // calls from inside a chunk fall back to serial execution.
  void run(int nchunks, const std::function<void(int)>& chunk_fn) {
    if (nchunks <= 0) return;
    if (num_threads_ <= 1 || nchunks == 1 || in_pool_thread()) {
      for (int i = 0; i < nchunks; ++i) chunk_fn(i);
      return;
    }
    std::lock_guard<std::mutex> api(api_mutex_);
    auto job = std::make_shared<Job>();
    job->fn = chunk_fn;  // owned copy; workers hold the job via shared_ptr
    job->total = nchunks;
    {
      std::lock_guard<std::mutex> lk(wake_mutex_);
      current_ = job;
      ++generation_;
    }
    wake_cv_.notify_all();
    in_pool_flag() = true;  // nested parallel calls from chunks go serial
    work(*job);
    in_pool_flag() = false;
    {
      std::unique_lock<std::mutex> lk(job->m);
      job->cv.wait(lk, [&] { return job->done.load() == job->total; });
    }
    {
      std::lock_guard<std::mutex> lk(wake_mutex_);
      if (current_ == job) current_.reset();
    }
    if (job->error) std::rethrow_exception(job->error);
  }

 private:
  struct Job {
    std::function<void(int)> fn;
    std::atomic<int> next{0};
    std::atomic<int> done{0};
    int total = 0;
    std::mutex m;
    std::condition_variable cv;
    std::exception_ptr error;  // first failure, rethrown by run()
  };

  ThreadPool() {
    num_threads_ = default_threads();
    start_workers();
  }
  ~ThreadPool() { stop_workers(); }

  static int default_threads() {
    if (const char* env = std::getenv("DGDF_THREADS")) {
      int n = std::atoi(env);
      if (n >= 1) return n;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
  }

  static bool& in_pool_flag() {
    thread_local bool flag = false;
    return flag;
  }
  static bool in_pool_thread() { return in_pool_flag(); }

  void start_workers() {
    stopping_ = false;
    for (int i = 1; i < num_threads_; ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  void stop_workers() {
    {
      std::lock_guard<std::mutex> lk(wake_mutex_);
      stopping_ = true;
    }
    wake_cv_.notify_all();
    for (auto& t : workers_) t.join();
    workers_.clear();
    stopping_ = false;
  }

  void worker_loop() {
    in_pool_flag() = true;
    std::uint64_t seen = 0;
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock<std::mutex> lk(wake_mutex_);
        wake_cv_.wait(lk, [&] { return stopping_ || generation_ != seen; });
        if (stopping_) return;
        seen = generation_;
        job = current_;
      }
      if (job) work(*job);
    }
  }

  static void work(Job& job) {
    for (;;) {
      int i = job.next.fetch_add(1, std::memory_order_relaxed);
      if (i >= job.total) break;
      try {
        job.fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(job.m);
        if (!job.error) job.error = std::current_exception();
      }
      if (job.done.fetch_add(1) + 1 == job.total) {
        std::lock_guard<std::mutex> lk(job.m);
        job.cv.notify_all();
      }
    }
  }

  int num_threads_ = 1;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
  std::mutex api_mutex_, wake_mutex_;
  std::condition_variable wake_cv_;
  std::shared_ptr<Job> current_;
  std::uint64_t generation_ = 0;
};

}  // namespace detail

inline int num_threads() { return detail::ThreadPool::instance().num_threads(); }
inline void set_num_threads(int n) { detail::ThreadPool::instance().set_num_threads(n); }

// Parallel loop over [0, n). Each index is processed exactly once and chunk
// boundaries are fixed, so results do not depend on the thread count as long
// as bodies write disjoint outputs.
template <class F>
inline void parallel_for(std::int64_t n, F&& body, std::int64_t grain = 1024) {
  if (n <= 0) return;
  auto& pool = detail::ThreadPool::instance();
  std::int64_t max_chunks = (n + grain - 1) / grain;
  int nchunks = static_cast<int>(std::min<std::int64_t>(max_chunks, pool.num_threads() * 4));
  if (nchunks <= 1) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::int64_t per = (n + nchunks - 1) / nchunks;
  std::function<void(int)> chunk_fn = [&](int ci) {
    std::int64_t lo = ci * per;
    std::int64_t hi = std::min<std::int64_t>(lo + per, n);
    for (std::int64_t i = lo; i < hi; ++i) body(i);
  };
  pool.run(nchunks, chunk_fn);
}

// ------------------------------------------------------------- scratch pool
// Reusable f32 buffers for the convolution workspaces; avoids remapping tens
// of megabytes per call. Thread-local, so parallel image pipelines do not
// contend.

namespace detail {
struct ScratchPool {
  std::vector<std::vector<float>> free_list;
  static ScratchPool& local() {
    thread_local ScratchPool pool;
    return pool;
  }
};
}  // namespace detail

// Contents are unspecified; callers must overwrite or zero-fill.
inline std::vector<float> scratch_acquire(size_t n) {
  auto& pool = detail::ScratchPool::local().free_list;
  for (size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].capacity() >= n) {
      std::vector<float> out = std::move(pool[i]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(i));
      out.resize(n);
      return out;
    }
  }
  return std::vector<float>(n);
}

inline void scratch_release(std::vector<float>&& v) {
  auto& pool = detail::ScratchPool::local().free_list;
  if (pool.size() < 12) pool.push_back(std::move(v));
}

// Deterministic sum reduction: f64 partial sums over fixed 8192-element
// chunks, combined in index order. Independent of the thread count.
template <class F>
inline double parallel_sum_f64(std::int64_t n, F&& term) {
  if (n <= 0) return 0.0;
  constexpr std::int64_t kChunk = 8192;
  std::int64_t nchunks = (n + kChunk - 1) / kChunk;
  std::vector<double> partial(static_cast<size_t>(nchunks), 0.0);
  parallel_for(nchunks, [&](std::int64_t ci) {
    std::int64_t lo = ci * kChunk;
    std::int64_t hi = std::min<std::int64_t>(lo + kChunk, n);
    double s = 0.0;
    for (std::int64_t i = lo; i < hi; ++i) s += term(i);
    partial[static_cast<size_t>(ci)] = s;
  }, 1);
  double total = 0.0;
  for (double s : partial) total += s;
  return total;
}

}  // namespace dgdf
