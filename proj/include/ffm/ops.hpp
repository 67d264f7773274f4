#pragma once

#include <cstdint>
#include <vector>

#include "ffm/tensor.hpp"

// Differentiable operations. Every op computes eagerly and, when a Tape is
// active and an input requires grad, records a backward rule that accumulates
// into input grad buffers.
//
// Binary elementwise ops broadcast with trailing-dimension alignment: shapes
// are right-aligned and each pair of extents must match or be 1. Mixed
// real/complex arguments promote to complex.
namespace ffm::ops {

// (M,K) x (K,N), real.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor sigmoid(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor abs_op(const Tensor& a);
Tensor clamp_max(const Tensor& a, double cap);

// Complex plumbing. make_complex takes two real tensors of equal shape;
// real_part / imag_part extract real tensors from a complex one.
Tensor make_complex(const Tensor& re, const Tensor& im);
Tensor real_part(const Tensor& z);
Tensor imag_part(const Tensor& z);
Tensor exp_complex(const Tensor& z);

// Mean/variance normalization over the last dimension, no learnable affine.
Tensor layer_norm(const Tensor& a, double eps);

// Inclusive prefix sum along axis 0. Runs a blocked multi-worker scan when
// worker_count() > 1; results agree with the sequential sum up to
// floating-point reassociation.
Tensor cumsum_scan(const Tensor& a);

// Stacked integer powers of a complex base: out has shape (n, *base.shape)
// with out[k] = base^(e0 + estep*k). All exponents must be nonnegative and
// estep is +1 or -1; rows are filled by iterated multiplication so the cost
// is one complex multiply per output element.
Tensor pow_range(const Tensor& base, std::size_t n, long e0, int estep);

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);
// Stacks equal-shaped tensors along a new leading axis: (N, *shape).
Tensor stack0(const std::vector<Tensor>& parts);
Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start,
              std::size_t len);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// logits: (N, V) real. Mean over masked rows of -log softmax(logits)[target].
// Rows with mask 0 contribute nothing. Throws ConfigError when no row is
// masked in.
Tensor masked_cross_entropy(const Tensor& logits,
                            const std::vector<std::size_t>& targets,
                            const std::vector<std::uint8_t>& mask);

// Fraction of masked rows whose argmax equals the target. Not differentiable.
double masked_accuracy(const Tensor& logits,
                       const std::vector<std::size_t>& targets,
                       const std::vector<std::uint8_t>& mask);

}  // namespace ffm::ops
