#pragma once

#include <atomic>

#include "dialectid/errors.hpp"

namespace dialectid {

inline std::atomic<bool>& interrupt_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

/// Async-signal-safe: only stores to a lock-free atomic.
inline void request_interrupt() { interrupt_flag().store(true, std::memory_order_relaxed); }

/// Long-running loops call this between units of work.
inline void check_interrupt() {
  if (interrupt_flag().load(std::memory_order_relaxed)) throw Interrupted();
}

}  // namespace dialectid
