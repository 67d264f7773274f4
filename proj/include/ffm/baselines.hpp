#pragma once

#include <vector>

#include "ffm/cell.hpp"

namespace ffm {

// Standard GRU, the sequential-efficiency foil. Hidden size is normally set
// to 2*m*c so its real state dimension matches the complex memory it is
// compared against. Gate maps act on the concatenation [x || h].
struct GruParams {
  std::size_t d = 0;
  std::size_t h = 0;
  Affine wz, wr, wn;  // update, reset, candidate: (d + h) -> h
};

GruParams gru_init(std::size_t d, std::size_t h, std::uint64_t seed);

struct GruOutput {
  Tensor Y;   // (T, h) or (T, B, h)
  Tensor hT;  // (h) or (B, h)
};

// z = sigma(Wz[x||h]), r = sigma(Wr[x||h]), n = tanh(Wn[x||r*h]),
// h' = z*h + (1-z)*n, applied strictly one timestep at a time.
GruOutput gru_forward(const GruParams& p, const Tensor& X, const Tensor& h0);
GruOutput gru_forward_batched(const GruParams& p, const Tensor& X,
                              const Tensor& h0);

std::vector<NamedTensor> named_arrays(const GruParams& p);
std::vector<Tensor> trainable_params(const GruParams& p);

// Per-timestep two-layer perceptron, the memoryless control.
struct MlpParams {
  std::size_t d = 0;
  std::size_t h = 0;
  std::size_t out = 0;
  Affine w1;  // d -> h, tanh
  Affine w2;  // h -> out
};

MlpParams mlp_init(std::size_t d, std::size_t h, std::size_t out,
                   std::uint64_t seed);

// X is (N, d) rows of independent timesteps; returns (N, out).
Tensor mlp_forward(const MlpParams& p, const Tensor& X);

std::vector<NamedTensor> named_arrays(const MlpParams& p);
std::vector<Tensor> trainable_params(const MlpParams& p);

}  // namespace ffm
