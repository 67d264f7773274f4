#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ffm/tensor.hpp"

namespace ffm {

// A supervised sequence batch. Observations are one-hot rows (d = vocab);
// targets and mask are row-major (b, t). Masked-out positions carry target 0
// and never reach the loss.
struct TaskBatch {
  Tensor observations;  // (B, T, vocab) real
  std::vector<std::size_t> targets;
  std::vector<std::uint8_t> mask;
  std::string name;
  std::size_t B = 0, T = 0, k = 0, vocab = 0;

  std::size_t symbol(std::size_t b, std::size_t t) const;
};

// target[t] = observation symbol at t - k, scored for t >= k.
TaskBatch gen_repeat_previous(std::size_t B, std::size_t T, std::size_t k,
                              std::size_t vocab, std::uint64_t seed);

// target at the final step = first observation symbol, scored there only.
TaskBatch gen_copy_first(std::size_t B, std::size_t T, std::size_t vocab,
                         std::uint64_t seed);

// Symbol-level JSON dump for cross-implementation comparisons.
std::string task_batch_json(const TaskBatch& batch);

}  // namespace ffm
