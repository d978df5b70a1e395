#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "seamforge/error.hpp"

namespace seamforge {

// Worker cap from SEAMFORGE_THREADS; defaults to the hardware concurrency.
inline unsigned thread_budget() {
  if (const char* env = std::getenv("SEAMFORGE_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != nullptr && *end == '\0' && v >= 1) return static_cast<unsigned>(v);
    throw ConfigError(std::string("SEAMFORGE_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace detail {
inline thread_local bool inside_parallel_for = false;
}

// Calls f(i) for i in [0, n) over contiguous static blocks. Each index is
// handled exactly once, so results written per index do not depend on the
// thread count. Nested calls run serially on the calling worker.
template <typename F>
void parallel_for(std::size_t n, F&& f) {
  const std::size_t workers =
      detail::inside_parallel_for ? 1 : std::min<std::size_t>(thread_budget(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t block = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      detail::inside_parallel_for = true;
      try {
        const std::size_t lo = w * block;
        const std::size_t hi = std::min(n, lo + block);
        for (std::size_t i = lo; i < hi; ++i) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace seamforge
