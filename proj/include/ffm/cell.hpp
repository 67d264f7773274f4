#pragma once

#include <string>
#include <vector>

#include "ffm/aggregator.hpp"

namespace ffm {

enum class ParamMode { Learned, Fixed, Off };

// Ablation switches. Off-modes zero the parameter and remove it from
// training; Fixed keeps the initialized value but detaches it.
// hadamard_gamma gives every trace row its own frequency vector (requires
// m == c). layer_norm is a test hook for the convolution equivalence check,
// not an ablation from the model family.
struct VariantFlags {
  bool input_gate = true;
  bool output_gate = true;
  ParamMode context = ParamMode::Learned;
  ParamMode decay = ParamMode::Learned;
  bool hadamard_gamma = false;
  bool layer_norm = true;
};

struct CellDims {
  std::size_t d = 0;
  std::size_t m = 0;
  std::size_t c = 0;
};

// w is (fan_in, fan_out), b is (fan_out).
struct Affine {
  Tensor w;
  Tensor b;
};

class Rng;

// Weight and bias uniform in +-1/sqrt(fan_in), trainable.
Affine uniform_affine(std::size_t in, std::size_t out, Rng& rng);

struct CellParams {
  CellDims dims;
  Affine l1, l2;  // d -> m, input feature and input gate
  Affine l3;      // 2*m*c -> d, real projection of the flattened state
  Affine l4, l5;  // d -> d, output gate and residual path
  DecayParams decay;
  VariantFlags variant;
  std::size_t t_e = 1024;
  double beta = 0.01;
};

// Default initialization against a nominal horizon t_e: decay rates linearly
// spaced between a_slow = ln(1/beta)/t_e and a_fast = ln(F64_MAX)/t_e - eps,
// frequency periods linearly spaced from t_e down to 1, linear maps uniform
// in +-1/sqrt(fan_in).
CellParams init(std::size_t d, std::size_t m, std::size_t c, std::size_t t_e,
                double beta, std::uint64_t seed,
                VariantFlags variant = VariantFlags{},
                std::size_t max_chunk_len = 1024);

// Same, but decay rates span trace durabilities in t_alpha_range and
// periods span t_omega_range, both with the schedule shape init uses
// (so (1, t_e) ranges reproduce init's schedules).
CellParams informed_init(std::size_t d, std::size_t m, std::size_t c,
                         std::pair<double, double> t_alpha_range,
                         std::pair<double, double> t_omega_range,
                         std::uint64_t seed,
                         VariantFlags variant = VariantFlags{},
                         std::size_t max_chunk_len = 1024);

struct CellOutput {
  Tensor Y;  // (T, d)
  RecurrentState last;
};

// Full cell pass: gate the input, aggregate it over time, project the state
// back to the real domain, blend with the residual path under the output
// gate. chunk = 0 picks a single scan when T fits, chunked otherwise.
CellOutput forward(const CellParams& p, const Tensor& X,
                   const RecurrentState& prev, std::size_t chunk = 0);

struct BatchedCellOutput {
  Tensor Y;     // (T, B, d)
  Tensor last;  // (B, m, c)
};

BatchedCellOutput forward_batched(const CellParams& p, const Tensor& X,
                                  const Tensor& carry, std::size_t chunk = 0);

// Interpretability readouts, (m, c) real with +infinity marking off entries.
// t_alpha: time for a trace to fall to fraction beta of its size.
// t_omega: oscillation period 2*pi/|omega|.
Tensor trace_durability(const CellParams& p, double beta);
Tensor context_period(const CellParams& p);

struct NamedTensor {
  std::string name;
  Tensor t;
};

// Every parameter array in checkpoint order.
std::vector<NamedTensor> named_arrays(const CellParams& p);
// Only the arrays gradient descent may update under the variant flags.
std::vector<Tensor> trainable_params(const CellParams& p);

}  // namespace ffm
