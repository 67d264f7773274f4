#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ffm/baselines.hpp"
#include "ffm/cell.hpp"
#include "ffm/tasks.hpp"

namespace ffm {

enum class ModelKind { Ffm, Gru, Mlp };
enum class OptKind { Adam, Sgd };
enum class TaskKind { RepeatPrevious, CopyFirst };
enum class InitKind { Default, Informed };

struct TrainConfig {
  ModelKind model = ModelKind::Ffm;
  std::size_t d = 8, m = 8, c = 4;
  std::size_t hidden = 0;  // GRU/MLP width; 0 picks 2*m*c for state parity
  VariantFlags variant;
  InitKind init = InitKind::Default;
  double t_alpha_lo = 32.0, t_alpha_hi = 104.0;
  double t_omega_lo = 32.0, t_omega_hi = 104.0;
  std::size_t t_e = 1024;
  double beta = 0.01;
  std::size_t max_chunk_len = 1024;
  std::size_t chunk = 0;  // forward chunk override, 0 = monolithic when T fits

  TaskKind task = TaskKind::RepeatPrevious;
  std::size_t T = 32, k = 4, vocab = 4;

  OptKind opt = OptKind::Adam;
  double lr = 3e-3;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  std::size_t batch = 64, steps = 500, eval_every = 50, eval_batch = 256;
  std::uint64_t seed = 0;
};

// One trained network. Exactly one member is active per kind; the GRU gets a
// linear readout head since its hidden size differs from the class count.
struct Model {
  ModelKind kind = ModelKind::Ffm;
  CellParams ffm;
  GruParams gru;
  Affine gru_head;
  MlpParams mlp;
};

Model build_model(const TrainConfig& cfg, std::uint64_t seed);
std::vector<NamedTensor> named_arrays(const Model& model);
std::vector<Tensor> trainable_params(const Model& model);

// Runs the batch through the model; rows of the result are (t, b) flattened,
// shape (T*B, vocab). One-hot observations are zero-padded up to the model
// input width when it is larger than the vocabulary.
Tensor model_logits(const Model& model, const TaskBatch& batch,
                    std::size_t chunk);

// Target/mask views matching model_logits row order.
void scored_rows(const TaskBatch& batch, std::vector<std::size_t>& targets,
                 std::vector<std::uint8_t>& mask);

class Optimizer {
public:
  Optimizer(OptKind kind, double lr, double beta1, double beta2, double eps,
            std::vector<Tensor> params);
  void step();
  void zero_grad();
  std::size_t steps_taken() const { return t_; }

private:
  OptKind kind_;
  double lr_, b1_, b2_, eps_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

struct EvalMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalMetrics evaluate_batch(const Model& model, const TaskBatch& batch,
                           std::size_t chunk);

struct EvalPoint {
  std::size_t step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double seconds = 0.0;
  std::vector<double> t_alpha;  // interpretability snapshots, FFM only
  std::vector<double> t_omega;
};

struct RunRecord {
  TrainConfig config;
  std::vector<EvalPoint> points;
  Model model;
};

// Masked cross-entropy minimization with periodic evaluation; throws
// StabilityError naming the step when the loss turns non-finite.
RunRecord train(const TrainConfig& cfg);

// Metrics on a fresh batch drawn from the config's evaluation seed stream.
EvalMetrics evaluate(const Model& model, const TrainConfig& cfg);

std::string run_record_csv(const RunRecord& rec);
std::string run_record_json(const RunRecord& rec);

std::string train_config_json(const TrainConfig& cfg);
// Strict: unknown keys anywhere in the document are a ConfigError.
TrainConfig parse_train_config(const std::string& text);

}  // namespace ffm
