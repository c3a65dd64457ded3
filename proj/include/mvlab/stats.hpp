#pragma once

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mvlab {

struct SampleStats {
  int n{0};
  double mean{0.0};
  double sd{0.0};
  double se{0.0};
};

inline SampleStats sample_stats(const std::vector<double>& xs) {
  SampleStats s;
  s.n = static_cast<int>(xs.size());
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double v : xs) sum += v;
  s.mean = sum / s.n;
  if (s.n > 1) {
    double acc = 0.0;
    for (double v : xs) acc += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(acc / (s.n - 1));
    s.se = s.sd / std::sqrt(static_cast<double>(s.n));
  }
  return s;
}

inline double rms(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double acc = 0.0;
  for (double v : xs) acc += v * v;
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

/// Run fn(0..n-1), possibly on several threads, returning results in index
/// order. Index-ordered results keep every later reduction byte-identical
/// regardless of thread count; work items must not share mutable state.
template <class Fn>
auto parallel_map(int n, int threads, Fn&& fn) -> std::vector<decltype(fn(0))> {
  using R = decltype(fn(0));
  std::vector<R> out(static_cast<size_t>(std::max(n, 0)));
  if (n <= 0) return out;
  if (threads <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fn(i);
    return out;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        out[static_cast<size_t>(i)] = fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  const int nw = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(nw));
  for (int i = 0; i < nw; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

}  // namespace mvlab
