#pragma once

#include <cstddef>
#include <functional>

namespace idlora {

// Worker threads used by parallel_for: IDLORA_THREADS when set (clamped to
// at least 1), hardware concurrency otherwise.
std::size_t worker_thread_cap();

// Runs fn(0..n-1), splitting across up to worker_thread_cap() threads. Each
// index is processed exactly once, so writes into index-owned slots make the
// parallel result identical to the sequential one.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace idlora
