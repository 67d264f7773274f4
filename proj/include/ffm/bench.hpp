#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ffm/trainer.hpp"

namespace ffm {

// One timed configuration. Timings are medians of `runs` passes taken after
// `warmups` untimed passes; memory is the tensor-buffer high-water mark from
// the instrumented allocation counter, not OS RSS.
struct BenchRow {
  std::string model;  // "ffm-scan", "ffm-recurrent", "gru", "mlp"
  std::size_t T = 0;
  int workers = 1;
  double median_seconds = 0.0;
  std::size_t peak_bytes = 0;
  bool equivalence_ok = true;
};

struct BenchReport {
  std::string header;
  std::vector<BenchRow> rows;
};

struct BenchOptions {
  std::vector<std::size_t> lengths = {256, 512, 1024};
  std::vector<int> workers = {1, 8};
  std::size_t runs = 5;
  std::size_t warmups = 2;
  std::size_t d = 8, m = 8, c = 4;
  std::uint64_t seed = 0;
};

// Times one forward+backward pass over a synthetic sequence. The memory cell
// is reported twice per row: once through the parallel scan and once stepping
// the recurrence timestep by timestep; the equivalence column checks the two
// paths agree on the outputs.
BenchReport bench_train_pass(ModelKind kind, const BenchOptions& opts);

// Per-step inference latency of the memory cell at two elapsed depths. The
// state update is O(1) in elapsed time, so the ratio should sit near 1.
struct InferenceLatency {
  double early_seconds = 0.0;  // per step, measured around t = 10
  double late_seconds = 0.0;   // per step, measured around t = 1000
  double ratio = 0.0;          // late / early
};
InferenceLatency inference_latency_probe(const BenchOptions& opts);

std::string bench_report_csv(const BenchReport& report);
std::string bench_report_table(const BenchReport& report);

struct BenchConfig {
  ModelKind model = ModelKind::Ffm;
  BenchOptions opts;
  bool latency_probe = false;  // also time single-step inference depth scaling
};

std::string bench_config_json(const BenchConfig& cfg);
// Strict: unknown keys are a ConfigError. Missing keys keep their defaults.
BenchConfig parse_bench_config(const std::string& text);

// Built-in correctness sweep: scan-vs-recurrence equivalence, gradient
// checks, the convolution oracle, chunking invariance, long-sequence
// stability, and the decay shift property, each reported with its worst
// error. The flags corrupt pieces on purpose so tests can confirm the checks
// have teeth: `naive_factoring` drops the stabilizing sign flip from the
// scan, `single_precision` rounds every op result through float32.
struct SelfTestOptions {
  bool naive_factoring = false;
  bool single_precision = false;
};

struct SelfTestCase {
  std::string module;
  std::string name;
  bool pass = false;
  double max_error = 0.0;
  std::string detail;  // empty unless something went wrong
};

struct SelfTestReport {
  std::vector<SelfTestCase> cases;
  bool all_pass = false;
};

SelfTestReport selftest(const SelfTestOptions& opts = {});
std::string selftest_report_text(const SelfTestReport& report);

}  // namespace ffm
