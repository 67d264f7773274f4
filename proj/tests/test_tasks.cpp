#include <cmath>
#include <vector>

#include "doctest.h"
#include "ffm/tasks.hpp"
#include "json.hpp"

using namespace ffm;

TEST_CASE("repeat_previous: targets follow the index-shift oracle") {
  const std::size_t B = 3, T = 32, k = 4, vocab = 4;
  TaskBatch batch = gen_repeat_previous(B, T, k, vocab, 2024);
  CHECK(batch.observations.shape() == Shape{B, T, vocab});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      if (t < k) {
        CHECK(batch.mask[b * T + t] == 0);
      } else {
        CHECK(batch.mask[b * T + t] == 1);
        CHECK(batch.targets[b * T + t] == batch.symbol(b, t - k));
      }
    }
  }
}

TEST_CASE("repeat_previous: k=0 is the identity task") {
  TaskBatch batch = gen_repeat_previous(2, 8, 0, 3, 7);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < 8; ++t) {
      CHECK(batch.mask[b * 8 + t] == 1);
      CHECK(batch.targets[b * 8 + t] == batch.symbol(b, t));
    }
  }
}

TEST_CASE("tasks: observations are exactly one-hot") {
  TaskBatch batch = gen_repeat_previous(4, 16, 2, 5, 11);
  const auto& o = batch.observations.rdata();
  for (std::size_t row = 0; row < 4 * 16; ++row) {
    double sum = 0.0;
    for (std::size_t v = 0; v < 5; ++v) {
      const double x = o[row * 5 + v];
      CHECK((x == 0.0 || x == 1.0));
      sum += x;
    }
    CHECK(sum == 1.0);
  }
}

TEST_CASE("tasks: validation errors") {
  CHECK_THROWS_AS(gen_repeat_previous(2, 8, 8, 4, 1), ConfigError);
  CHECK_THROWS_AS(gen_repeat_previous(2, 8, 9, 4, 1), ConfigError);
  CHECK_THROWS_AS(gen_repeat_previous(2, 8, 2, 1, 1), ConfigError);
  CHECK_THROWS_AS(gen_copy_first(2, 1, 4, 1), ConfigError);
  CHECK_THROWS_AS(gen_copy_first(0, 4, 4, 1), ConfigError);
}

TEST_CASE("copy_first: only the last step is scored against the first symbol") {
  const std::size_t B = 8, T = 12, vocab = 4;
  TaskBatch batch = gen_copy_first(B, T, vocab, 31);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t + 1 < T; ++t) CHECK(batch.mask[b * T + t] == 0);
    CHECK(batch.mask[b * T + T - 1] == 1);
    CHECK(batch.targets[b * T + T - 1] == batch.symbol(b, 0));
  }
}

TEST_CASE("copy_first at T=2 equals repeat_previous k=1 at the scored step") {
  TaskBatch cf = gen_copy_first(16, 2, 3, 99);
  TaskBatch rp = gen_repeat_previous(16, 2, 1, 3, 99);
  // Same seed and draw order, so the symbol streams agree.
  for (std::size_t i = 0; i < cf.observations.size(); ++i) {
    CHECK(cf.observations.rdata()[i] == rp.observations.rdata()[i]);
  }
  for (std::size_t b = 0; b < 16; ++b) {
    CHECK(cf.targets[b * 2 + 1] == rp.targets[b * 2 + 1]);
    CHECK(cf.mask[b * 2 + 1] == 1);
  }
}

TEST_CASE("copy_first: a constant row's target is that constant symbol") {
  // vocab=2, T=2: about half the rows repeat one symbol.
  TaskBatch batch = gen_copy_first(64, 2, 2, 5);
  bool found = false;
  for (std::size_t b = 0; b < 64; ++b) {
    if (batch.symbol(b, 0) == batch.symbol(b, 1)) {
      found = true;
      CHECK(batch.targets[b * 2 + 1] == batch.symbol(b, 0));
    }
  }
  CHECK(found);
}

TEST_CASE("tasks: identical seeds reproduce batches exactly") {
  TaskBatch a = gen_repeat_previous(4, 24, 3, 4, 77);
  TaskBatch b = gen_repeat_previous(4, 24, 3, 4, 77);
  TaskBatch c = gen_repeat_previous(4, 24, 3, 4, 78);
  CHECK(a.observations.rdata() == b.observations.rdata());
  CHECK(a.targets == b.targets);
  CHECK(a.mask == b.mask);
  CHECK(a.observations.rdata() != c.observations.rdata());
}

TEST_CASE("tasks: target classes stay balanced within 3 sigma") {
  const std::size_t B = 256, T = 64, vocab = 4;
  TaskBatch batch = gen_repeat_previous(B, T, 0, vocab, 12345);
  std::vector<std::size_t> counts(vocab, 0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < batch.targets.size(); ++i) {
    if (batch.mask[i]) {
      counts[batch.targets[i]]++;
      n++;
    }
  }
  const double p = 1.0 / vocab;
  const double sigma = std::sqrt(n * p * (1.0 - p));
  for (std::size_t v = 0; v < vocab; ++v) {
    CHECK(std::abs(double(counts[v]) - n * p) <= 3.0 * sigma);
  }
}

TEST_CASE("tasks: JSON export round-trips the symbol view") {
  TaskBatch batch = gen_repeat_previous(2, 6, 2, 4, 55);
  auto j = nlohmann::json::parse(task_batch_json(batch));
  CHECK(j["name"] == "repeat_previous");
  CHECK(j["B"] == 2);
  CHECK(j["T"] == 6);
  CHECK(j["k"] == 2);
  CHECK(j["vocab"] == 4);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < 6; ++t) {
      CHECK(j["symbols"][b][t].get<std::size_t>() == batch.symbol(b, t));
      CHECK(j["targets"][b][t].get<std::size_t>() ==
            batch.targets[b * 6 + t]);
      CHECK(j["mask"][b][t].get<bool>() == (batch.mask[b * 6 + t] != 0));
    }
  }
}
