#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace rbsde {

// Process-wide switch for layer-parallel sweeps. Every parallel loop in the
// library writes to pre-assigned slots, so results do not depend on it.
struct ExecutionSettings {
  std::atomic<bool> parallel{true};
  std::atomic<unsigned> workers{4};
};

inline ExecutionSettings& execution() {
  static ExecutionSettings settings;
  return settings;
}

inline void set_parallel(bool enabled) { execution().parallel = enabled; }
inline bool parallel_enabled() { return execution().parallel.load(); }

inline unsigned worker_count() {
  if (!parallel_enabled()) return 1;
  return std::max(1u, execution().workers.load());
}

/// Runs fn(i) for i in [0, n), split into contiguous chunks.
/// The first exception (by chunk order) is rethrown on the calling thread.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t grain = 256) {
  const std::size_t workers = worker_count();
  if (workers <= 1 || n <= grain) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t chunks = std::min<std::size_t>(workers, (n + grain - 1) / grain);
  const std::size_t per_chunk = (n + chunks - 1) / chunks;
  std::vector<std::exception_ptr> errors(chunks);
  {
    std::vector<std::jthread> pool;
    pool.reserve(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
      pool.emplace_back([&, c] {
        const std::size_t begin = c * per_chunk;
        const std::size_t end = std::min(n, begin + per_chunk);
        try {
          for (std::size_t i = begin; i < end; ++i) fn(i);
        } catch (...) {
          errors[c] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Splits [0, n) into chunk_count contiguous ranges and runs fn(chunk, begin, end).
/// Used for reductions where each chunk keeps a local partial result.
template <class Fn>
std::size_t parallel_chunks(std::size_t n, Fn&& fn) {
  const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(worker_count(), n));
  const std::size_t per_chunk = (n + chunks - 1) / chunks;
  if (chunks == 1) {
    fn(std::size_t{0}, std::size_t{0}, n);
    return 1;
  }
  std::vector<std::exception_ptr> errors(chunks);
  {
    std::vector<std::jthread> pool;
    for (std::size_t c = 0; c < chunks; ++c) {
      pool.emplace_back([&, c] {
        const std::size_t begin = std::min(n, c * per_chunk);
        const std::size_t end = std::min(n, begin + per_chunk);
        try {
          fn(c, begin, end);
        } catch (...) {
          errors[c] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return chunks;
}

}  // namespace rbsde
