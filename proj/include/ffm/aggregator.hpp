#pragma once

#include "ffm/tensor.hpp"

namespace ffm {

// Learnable decay/context parameters behind the gamma operator
// gamma(t)[j,k] = exp(-t * (alpha_j + i * omega_k)).
//
// alpha_raw is unconstrained; the effective decay is min(|alpha_raw|,
// alpha_max) so it stays positive and e^(alpha * max_chunk_len) stays finite.
// omega is a length-c vector, or an (m, c) matrix when each trace row carries
// its own frequencies (the hadamard cell variant).
struct DecayParams {
  Tensor alpha_raw;
  Tensor omega;
  std::size_t max_chunk_len = 1024;
  double alpha_max = 0.0;

  static double compute_alpha_max(std::size_t max_chunk_len);
  static DecayParams create(std::vector<double> alpha_raw,
                            std::vector<double> omega,
                            std::size_t max_chunk_len = 1024);
  static DecayParams create_hadamard(std::vector<double> alpha_raw,
                                     std::vector<double> omega_rows,
                                     std::size_t m,
                                     std::size_t max_chunk_len = 1024);

  std::size_t m() const { return alpha_raw.shape()[0]; }
  std::size_t c() const { return omega.shape().back(); }
  bool hadamard() const { return omega.rank() == 2; }

  // min(|alpha_raw|, alpha_max), differentiable away from 0 and the clamp.
  Tensor effective_alpha() const;
};

// Complex (m, c) memory state with an elapsed-step counter.
struct RecurrentState {
  Tensor S;
  std::size_t step = 0;

  static RecurrentState zeros(std::size_t m, std::size_t c);
};

enum class ScanMode {
  Stabilized,      // exponent signs swapped so partial sums never grow
  NaiveFactoring,  // direct factoring; overflows at long T, test oracle only
};

// gamma(t) as a complex (m, c) tensor. t may be negative; |t| * max(alpha)
// must stay below ln(F64_MAX).
Tensor gamma_pow(const DecayParams& p, double t);

// One-step recurrence: S_new = gamma(1) * S_prev + x_tilde outer ones(c).
RecurrentState step(const DecayParams& p, const Tensor& x_tilde,
                    const RecurrentState& prev);

struct ScanResult {
  Tensor states;  // (T, m, c) complex
  RecurrentState last;
};

// All T states in one pass: materialize damped inputs, prefix-sum over time,
// rescale per row, add the decayed carry-in. T must be <= max_chunk_len.
ScanResult scan(const DecayParams& p, const Tensor& x_tilde,
                const RecurrentState& prev,
                ScanMode mode = ScanMode::Stabilized);

// scan over ceil(T / chunk) segments, carrying state; gradients flow across
// segment boundaries through the carried state.
ScanResult chunked_scan(const DecayParams& p, const Tensor& x_tilde,
                        const RecurrentState& prev, std::size_t chunk,
                        ScanMode mode = ScanMode::Stabilized);

// Batched core used by the cell and trainer: u is (T, B, m), the carry is
// (B, m, c), states come back as (T, B, m, c).
struct BatchedScanResult {
  Tensor states;
  Tensor last;  // (B, m, c)
};

BatchedScanResult scan_batched(const DecayParams& p, const Tensor& u,
                               const Tensor& carry,
                               ScanMode mode = ScanMode::Stabilized);
BatchedScanResult chunked_scan_batched(const DecayParams& p, const Tensor& u,
                                       const Tensor& carry, std::size_t chunk,
                                       ScanMode mode = ScanMode::Stabilized);

}  // namespace ffm
