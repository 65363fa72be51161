#pragma once

// Deterministic block-parallel loops. Work is cut into blocks whose
// boundaries depend only on the problem size, never on the worker count, and
// each block owns its output slot. Callers reduce block results in block
// order, so results are bit-identical for any KC_THREADS value.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace kc {

// Worker count: KC_THREADS if set and positive, else hardware concurrency.
inline unsigned worker_count() {
  if (const char* env = std::getenv("KC_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<unsigned>(std::min<long>(v, 256));
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

// Calls fn(block_index, begin, end) for every block of `block_size` items in
// [0, n). Exceptions are captured and the one from the lowest block rethrown.
template <typename Fn>
void parallel_blocks(std::size_t n, std::size_t block_size, Fn&& fn) {
  if (n == 0) return;
  block_size = std::max<std::size_t>(block_size, 1);
  const std::size_t blocks = (n + block_size - 1) / block_size;
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(worker_count(), blocks));

  std::vector<std::exception_ptr> errors(blocks);
  auto run_block = [&](std::size_t b) {
    const std::size_t begin = b * block_size;
    const std::size_t end = std::min(n, begin + block_size);
    try {
      fn(b, begin, end);
    } catch (...) {
      errors[b] = std::current_exception();
    }
  };

  if (workers <= 1) {
    for (std::size_t b = 0; b < blocks; ++b) run_block(b);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t b = next.fetch_add(1); b < blocks; b = next.fetch_add(1)) run_block(b);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::size_t block_count(std::size_t n, std::size_t block_size) {
  return n == 0 ? 0 : (n + block_size - 1) / block_size;
}

}  // namespace kc
