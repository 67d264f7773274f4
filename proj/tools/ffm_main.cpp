// Command-line driver: train / eval / bench / selftest / inspect.
//
// Everything but paths, seed, and worker count lives in strict JSON configs
// so run records can embed the exact configuration they were produced from.
// Exit codes: 0 success, 1 validation problem (bad flags, bad config, missing
// file), 2 numeric failure (divergence, overflow, failed self-test).

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ffm/bench.hpp"
#include "ffm/checkpoint.hpp"
#include "ffm/errors.hpp"
#include "ffm/tensor.hpp"
#include "ffm/trainer.hpp"

namespace {

using namespace ffm;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out << text;
  if (!out.flush()) throw ConfigError("cannot write " + path);
}

// Resolves an artifact name against --out, creating the directory on first
// use. Empty --out means "don't write files".
struct OutDir {
  std::string dir;
  bool enabled() const { return !dir.empty(); }
  std::string path(const std::string& name) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create " + dir + ": " + ec.message());
    return (std::filesystem::path(dir) / name).string();
  }
};

const char* kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::Ffm: return "ffm";
    case ModelKind::Gru: return "gru";
    case ModelKind::Mlp: return "mlp";
  }
  return "?";
}

const char* mode_name(ParamMode m) {
  switch (m) {
    case ParamMode::Learned: return "learned";
    case ParamMode::Fixed: return "fixed";
    case ParamMode::Off: return "off";
  }
  return "?";
}

void print_eval_points(const RunRecord& rec) {
  for (const EvalPoint& p : rec.points) {
    std::printf("step %6zu  loss %.6f  accuracy %.4f  (%.2f s)\n", p.step,
                p.loss, p.accuracy, p.seconds);
  }
}

int do_eval(const std::string& ckpt_path, const std::string& cfg_path,
            OutDir& out) {
  Model model = load_model(read_file(ckpt_path));
  TrainConfig cfg = parse_train_config(read_file(cfg_path));
  if (model.kind != cfg.model) {
    std::fprintf(stderr,
                 "note: checkpoint holds a %s model, config says %s; "
                 "evaluating the checkpoint\n",
                 kind_name(model.kind), kind_name(cfg.model));
  }
  EvalMetrics m = evaluate(model, cfg);
  std::printf("loss %.6f accuracy %.4f\n", m.loss, m.accuracy);
  if (out.enabled()) {
    nlohmann::json j{{"loss", m.loss}, {"accuracy", m.accuracy}};
    write_file(out.path("eval.json"), j.dump(2) + "\n");
  }
  return 0;
}

int do_selftest(const SelfTestOptions& opts) {
  SelfTestReport report = selftest(opts);
  std::fputs(selftest_report_text(report).c_str(), stdout);
  return report.all_pass ? 0 : 2;
}

void print_table(const char* title, const Tensor& t) {
  std::printf("%s\n", title);
  const std::vector<double>& v = t.rdata();
  const std::size_t rows = t.shape()[0], cols = t.shape()[1];
  for (std::size_t i = 0; i < rows; ++i) {
    std::printf(" ");
    for (std::size_t j = 0; j < cols; ++j) {
      std::printf(" %10.6g", v[i * cols + j]);
    }
    std::printf("\n");
  }
}

void print_row(const char* title, const Tensor& t) {
  std::printf("%s", title);
  for (double x : t.rdata()) std::printf(" %.6g", x);
  std::printf("\n");
}

int do_inspect(const std::string& ckpt_path) {
  Model model = load_model(read_file(ckpt_path));
  std::size_t scalars = 0;
  for (const NamedTensor& a : named_arrays(model)) scalars += a.t.size();
  std::printf("model: %s (%zu parameters)\n", kind_name(model.kind), scalars);
  switch (model.kind) {
    case ModelKind::Gru:
      std::printf("dims: input %zu, hidden %zu, classes %zu\n", model.gru.d,
                  model.gru.h, model.gru_head.w.shape()[1]);
      std::printf("no decay parameters to inspect\n");
      return 0;
    case ModelKind::Mlp:
      std::printf("dims: input %zu, hidden %zu, outputs %zu\n", model.mlp.d,
                  model.mlp.h, model.mlp.out);
      std::printf("no decay parameters to inspect\n");
      return 0;
    case ModelKind::Ffm:
      break;
  }
  const CellParams& p = model.ffm;
  std::printf("dims: d=%zu m=%zu c=%zu\n", p.dims.d, p.dims.m, p.dims.c);
  std::printf("init horizon t_e=%zu, beta=%g, max chunk %zu\n", p.t_e, p.beta,
              p.decay.max_chunk_len);
  std::printf(
      "variant: input_gate=%s output_gate=%s context=%s decay=%s "
      "gamma=%s layer_norm=%s\n",
      p.variant.input_gate ? "on" : "off",
      p.variant.output_gate ? "on" : "off", mode_name(p.variant.context),
      mode_name(p.variant.decay),
      p.variant.hadamard_gamma ? "hadamard" : "outer",
      p.variant.layer_norm ? "on" : "off");
  const Tensor alpha = p.decay.effective_alpha();
  const Tensor omega = p.decay.omega;
  if (p.decay.hadamard()) {
    print_table("decay rates alpha (m x c):", alpha);
    print_table("angular frequencies omega (m x c):", omega);
  } else {
    print_row("decay rates alpha:", alpha);
    print_row("angular frequencies omega:", omega);
  }
  const Tensor ta = trace_durability(p, p.beta);
  const Tensor tw = context_period(p);
  char title[96];
  std::snprintf(title, sizeof(title),
                "trace durability t_alpha (steps to reach %g of a trace):",
                p.beta);
  print_table(title, ta);
  print_table("context period t_omega (steps per cycle):", tw);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fast and forgetful memory toolkit"};
  app.require_subcommand(1);

  std::string cfg_path, ckpt_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  OutDir out;
  SelfTestOptions st;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "override the config seed");
    cmd->add_option("--workers", workers, "worker threads for tensor ops")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--out", out.dir, "directory for output files");
  };

  CLI::App* cmd_train =
      app.add_subcommand("train", "train a model from a JSON config");
  cmd_train->add_option("config", cfg_path, "training config JSON")
      ->required();
  add_common(cmd_train);

  CLI::App* cmd_eval =
      app.add_subcommand("eval", "evaluate a checkpoint on a config's task");
  cmd_eval->add_option("checkpoint", ckpt_path, "checkpoint JSON")->required();
  cmd_eval->add_option("config", cfg_path, "training config JSON")->required();
  add_common(cmd_eval);

  CLI::App* cmd_bench =
      app.add_subcommand("bench", "time forward+backward passes");
  cmd_bench->add_option("config", cfg_path, "bench config JSON")->required();
  add_common(cmd_bench);

  CLI::App* cmd_selftest =
      app.add_subcommand("selftest", "run the built-in correctness sweep");
  cmd_selftest->add_flag("--naive-factoring", st.naive_factoring,
                         "corrupt the scan factoring (diagnostic)");
  cmd_selftest->add_flag("--single-precision", st.single_precision,
                         "round every op through float32 (diagnostic)");
  add_common(cmd_selftest);

  CLI::App* cmd_inspect = app.add_subcommand(
      "inspect", "print decay durations and periods of a checkpoint");
  cmd_inspect->add_option("checkpoint", ckpt_path, "checkpoint JSON")
      ->required();
  add_common(cmd_inspect);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (workers) set_worker_count(*workers);

  try {
    if (*cmd_train) {
      TrainConfig cfg = parse_train_config(read_file(cfg_path));
      if (seed) cfg.seed = *seed;
      RunRecord rec = train(cfg);
      print_eval_points(rec);
      const EvalPoint& last = rec.points.back();
      std::printf("final %s: loss %.6f accuracy %.4f after %zu steps\n",
                  kind_name(cfg.model), last.loss, last.accuracy, cfg.steps);
      if (out.enabled()) {
        write_file(out.path("run.csv"), run_record_csv(rec));
        write_file(out.path("run.json"), run_record_json(rec));
        write_file(out.path("checkpoint.json"), save_model(rec.model));
        std::printf("wrote %s, run.json, checkpoint.json\n",
                    out.path("run.csv").c_str());
      }
      return 0;
    }
    if (*cmd_eval) {
      return do_eval(ckpt_path, cfg_path, out);
    }
    if (*cmd_bench) {
      BenchConfig cfg = parse_bench_config(read_file(cfg_path));
      if (seed) cfg.opts.seed = *seed;
      BenchReport report = bench_train_pass(cfg.model, cfg.opts);
      std::fputs(bench_report_table(report).c_str(), stdout);
      if (cfg.latency_probe) {
        InferenceLatency lat = inference_latency_probe(cfg.opts);
        std::printf(
            "\nper-step inference latency: %.3g s at depth 10, %.3g s at "
            "depth 1000 (ratio %.3f)\n",
            lat.early_seconds, lat.late_seconds, lat.ratio);
      }
      if (out.enabled()) {
        write_file(out.path("bench.csv"), bench_report_csv(report));
        std::printf("wrote %s\n", out.path("bench.csv").c_str());
      }
      return 0;
    }
    if (*cmd_selftest) return do_selftest(st);
    if (*cmd_inspect) return do_inspect(ckpt_path);
  } catch (const StabilityError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal failure: %s\n", e.what());
    return 2;
  }
  return 1;
}
