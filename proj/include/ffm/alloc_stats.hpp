#pragma once

#include <atomic>
#include <cstddef>

namespace ffm {

// Byte counter instrumenting tensor storage (data and grad buffers).
// Deterministic alternative to OS RSS for the space-complexity checks.
class AllocStats {
public:
  static void add(std::size_t bytes) {
    std::size_t cur = current_.fetch_add(bytes) + bytes;
    std::size_t peak = peak_.load();
    while (cur > peak && !peak_.compare_exchange_weak(peak, cur)) {
    }
  }

  static void sub(std::size_t bytes) { current_.fetch_sub(bytes); }

  static std::size_t current() { return current_.load(); }
  static std::size_t peak() { return peak_.load(); }

  // Resets the high-water mark to the current live total.
  static void reset_peak() { peak_.store(current_.load()); }

private:
  static inline std::atomic<std::size_t> current_{0};
  static inline std::atomic<std::size_t> peak_{0};
};

}  // namespace ffm
