#include "ffm/tasks.hpp"

#include "ffm/rng.hpp"
#include "json.hpp"

namespace ffm {

namespace {

// Draw order is frozen: symbols go (b, t) row-major so a fixed seed pins the
// whole batch across implementations.
std::vector<std::size_t> draw_symbols(std::size_t B, std::size_t T,
                                      std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> s(B * T);
  for (auto& v : s) v = rng.below(vocab);
  return s;
}

Tensor one_hot(const std::vector<std::size_t>& symbols, std::size_t B,
               std::size_t T, std::size_t vocab) {
  Tensor obs = Tensor::real({B, T, vocab});
  auto& o = obs.rdata();
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    o[i * vocab + symbols[i]] = 1.0;
  }
  return obs;
}

}  // namespace

std::size_t TaskBatch::symbol(std::size_t b, std::size_t t) const {
  const auto& o = observations.rdata();
  const std::size_t base = (b * T + t) * vocab;
  for (std::size_t v = 0; v < vocab; ++v) {
    if (o[base + v] == 1.0) return v;
  }
  throw DimensionError("TaskBatch: row is not one-hot");
}

TaskBatch gen_repeat_previous(std::size_t B, std::size_t T, std::size_t k,
                              std::size_t vocab, std::uint64_t seed) {
  if (B < 1 || T < 1) throw ConfigError("gen_repeat_previous: B, T >= 1");
  if (vocab < 2) throw ConfigError("gen_repeat_previous: vocab must be >= 2");
  if (k >= T) {
    throw ConfigError("gen_repeat_previous: need k < T, got k=" +
                      std::to_string(k) + " T=" + std::to_string(T));
  }
  const std::vector<std::size_t> sym = draw_symbols(B, T, vocab, seed);
  TaskBatch batch;
  batch.observations = one_hot(sym, B, T, vocab);
  batch.targets.assign(B * T, 0);
  batch.mask.assign(B * T, 0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = k; t < T; ++t) {
      batch.targets[b * T + t] = sym[b * T + t - k];
      batch.mask[b * T + t] = 1;
    }
  }
  batch.name = "repeat_previous";
  batch.B = B;
  batch.T = T;
  batch.k = k;
  batch.vocab = vocab;
  return batch;
}

TaskBatch gen_copy_first(std::size_t B, std::size_t T, std::size_t vocab,
                         std::uint64_t seed) {
  if (B < 1) throw ConfigError("gen_copy_first: B >= 1");
  if (T < 2) throw ConfigError("gen_copy_first: T must be >= 2");
  if (vocab < 2) throw ConfigError("gen_copy_first: vocab must be >= 2");
  const std::vector<std::size_t> sym = draw_symbols(B, T, vocab, seed);
  TaskBatch batch;
  batch.observations = one_hot(sym, B, T, vocab);
  batch.targets.assign(B * T, 0);
  batch.mask.assign(B * T, 0);
  for (std::size_t b = 0; b < B; ++b) {
    batch.targets[b * T + T - 1] = sym[b * T];
    batch.mask[b * T + T - 1] = 1;
  }
  batch.name = "copy_first";
  batch.B = B;
  batch.T = T;
  batch.k = T - 1;
  batch.vocab = vocab;
  return batch;
}

std::string task_batch_json(const TaskBatch& batch) {
  nlohmann::json j;
  j["name"] = batch.name;
  j["B"] = batch.B;
  j["T"] = batch.T;
  j["k"] = batch.k;
  j["vocab"] = batch.vocab;
  j["encoding"] = "one-hot";
  nlohmann::json sym = nlohmann::json::array();
  nlohmann::json tgt = nlohmann::json::array();
  nlohmann::json msk = nlohmann::json::array();
  for (std::size_t b = 0; b < batch.B; ++b) {
    nlohmann::json sr = nlohmann::json::array();
    nlohmann::json tr = nlohmann::json::array();
    nlohmann::json mr = nlohmann::json::array();
    for (std::size_t t = 0; t < batch.T; ++t) {
      sr.push_back(batch.symbol(b, t));
      tr.push_back(batch.targets[b * batch.T + t]);
      mr.push_back(batch.mask[b * batch.T + t] != 0);
    }
    sym.push_back(std::move(sr));
    tgt.push_back(std::move(tr));
    msk.push_back(std::move(mr));
  }
  j["symbols"] = std::move(sym);
  j["targets"] = std::move(tgt);
  j["mask"] = std::move(msk);
  return j.dump(2);
}

}  // namespace ffm
