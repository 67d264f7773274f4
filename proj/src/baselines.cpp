#include "ffm/baselines.hpp"

#include <cmath>

#include "ffm/ops.hpp"
#include "ffm/rng.hpp"

namespace ffm {

namespace {

Tensor apply(const Tensor& x, const Affine& a) {
  return ops::add(ops::matmul(x, a.w), a.b);
}

}  // namespace

GruParams gru_init(std::size_t d, std::size_t h, std::uint64_t seed) {
  if (d < 1 || h < 1) throw ConfigError("gru_init: d and h must be >= 1");
  GruParams p;
  p.d = d;
  p.h = h;
  Rng rng(seed);
  p.wz = uniform_affine(d + h, h, rng);
  p.wr = uniform_affine(d + h, h, rng);
  p.wn = uniform_affine(d + h, h, rng);
  return p;
}

GruOutput gru_forward_batched(const GruParams& p, const Tensor& X,
                              const Tensor& h0) {
  if (!X.defined() || X.rank() != 3 || X.dtype() != DType::Real64 ||
      X.shape()[2] != p.d) {
    throw DimensionError("gru_forward: X must be real (T, B, d)");
  }
  const std::size_t T = X.shape()[0], B = X.shape()[1];
  if (!h0.defined() || h0.shape() != Shape{B, p.h} ||
      h0.dtype() != DType::Real64) {
    throw DimensionError("gru_forward: h0 must be real (B, h)");
  }
  if (!X.all_finite() || !h0.all_finite()) {
    throw StabilityError("gru_forward: non-finite input");
  }

  Tensor one = Tensor::scalar(1.0);
  Tensor h = h0;
  std::vector<Tensor> hs;
  hs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    Tensor xt = ops::reshape(ops::narrow(X, 0, t, 1), {B, p.d});
    Tensor xh = ops::concat(xt, h, 1);
    Tensor z = ops::sigmoid(apply(xh, p.wz));
    Tensor r = ops::sigmoid(apply(xh, p.wr));
    Tensor n = ops::tanh_op(apply(ops::concat(xt, ops::mul(r, h), 1), p.wn));
    h = ops::add(ops::mul(z, h), ops::mul(ops::sub(one, z), n));
    hs.push_back(h);
  }
  return {ops::stack0(hs), h};
}

GruOutput gru_forward(const GruParams& p, const Tensor& X, const Tensor& h0) {
  if (!X.defined() || X.rank() != 2 || X.dtype() != DType::Real64) {
    throw DimensionError("gru_forward: X must be real (T, d)");
  }
  if (!h0.defined() || h0.shape() != Shape{p.h}) {
    throw DimensionError("gru_forward: h0 must have shape (h)");
  }
  const std::size_t T = X.shape()[0];
  GruOutput b = gru_forward_batched(p, ops::reshape(X, {T, 1, X.shape()[1]}),
                                    ops::reshape(h0, {1, p.h}));
  return {ops::reshape(b.Y, {T, p.h}), ops::reshape(b.hT, {p.h})};
}

std::vector<NamedTensor> named_arrays(const GruParams& p) {
  return {{"wz.w", p.wz.w}, {"wz.b", p.wz.b}, {"wr.w", p.wr.w},
          {"wr.b", p.wr.b}, {"wn.w", p.wn.w}, {"wn.b", p.wn.b}};
}

std::vector<Tensor> trainable_params(const GruParams& p) {
  std::vector<Tensor> out;
  for (const NamedTensor& nt : named_arrays(p)) out.push_back(nt.t);
  return out;
}

MlpParams mlp_init(std::size_t d, std::size_t h, std::size_t out,
                   std::uint64_t seed) {
  if (d < 1 || h < 1 || out < 1) {
    throw ConfigError("mlp_init: all sizes must be >= 1");
  }
  MlpParams p;
  p.d = d;
  p.h = h;
  p.out = out;
  Rng rng(seed);
  p.w1 = uniform_affine(d, h, rng);
  p.w2 = uniform_affine(h, out, rng);
  return p;
}

Tensor mlp_forward(const MlpParams& p, const Tensor& X) {
  if (!X.defined() || X.rank() != 2 || X.dtype() != DType::Real64 ||
      X.shape()[1] != p.d) {
    throw DimensionError("mlp_forward: X must be real (N, d)");
  }
  return apply(ops::tanh_op(apply(X, p.w1)), p.w2);
}

std::vector<NamedTensor> named_arrays(const MlpParams& p) {
  return {{"w1.w", p.w1.w}, {"w1.b", p.w1.b}, {"w2.w", p.w2.w},
          {"w2.b", p.w2.b}};
}

std::vector<Tensor> trainable_params(const MlpParams& p) {
  std::vector<Tensor> out;
  for (const NamedTensor& nt : named_arrays(p)) out.push_back(nt.t);
  return out;
}

}  // namespace ffm
