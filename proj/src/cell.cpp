#include "ffm/cell.hpp"

#include <cmath>
#include <limits>

#include "ffm/ops.hpp"
#include "ffm/rng.hpp"

namespace ffm {

Affine uniform_affine(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out), b(out);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  for (auto& v : b) v = rng.uniform(-bound, bound);
  Affine a;
  a.w = Tensor::from_vector({in, out}, w, true);
  a.b = Tensor::from_vector({out}, b, true);
  return a;
}

namespace {

constexpr double kEpsLn = 1e-5;
constexpr double kTwoPi = 6.283185307179586476925286766559;

// v_j = (j/n)*end + (1-j/n)*start for j = 1..n. Hits end exactly at j = n
// and approaches (but never reaches) start, the shape both the decay and
// period schedules use.
std::vector<double> endpoint_schedule(double start, double end, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t j = 1; j <= n; ++j) {
    const double s = static_cast<double>(j) / static_cast<double>(n);
    v[j - 1] = s * end + (1.0 - s) * start;
  }
  return v;
}

void validate_dims(std::size_t d, std::size_t m, std::size_t c,
                   const VariantFlags& variant) {
  if (d < 1 || m < 1 || c < 1) {
    throw ConfigError("cell init: d, m, c must all be >= 1");
  }
  if (variant.hadamard_gamma && m != c) {
    throw ConfigError("cell init: hadamard gamma product requires m == c");
  }
}

CellParams assemble(std::size_t d, std::size_t m, std::size_t c,
                    std::vector<double> alpha, const std::vector<double>& periods,
                    std::uint64_t seed, const VariantFlags& variant,
                    std::size_t max_chunk_len, std::size_t t_e, double beta) {
  std::vector<double> omega(c);
  for (std::size_t k = 0; k < c; ++k) omega[k] = kTwoPi / periods[k];
  if (variant.decay == ParamMode::Off) alpha.assign(m, 0.0);
  if (variant.context == ParamMode::Off) omega.assign(c, 0.0);

  CellParams p;
  p.dims = {d, m, c};
  p.variant = variant;
  p.t_e = t_e;
  p.beta = beta;
  if (variant.hadamard_gamma) {
    std::vector<double> rows;
    rows.reserve(m * c);
    for (std::size_t j = 0; j < m; ++j) {
      rows.insert(rows.end(), omega.begin(), omega.end());
    }
    p.decay = DecayParams::create_hadamard(alpha, rows, m, max_chunk_len);
  } else {
    p.decay = DecayParams::create(alpha, omega, max_chunk_len);
  }
  p.decay.alpha_raw.node()->set_requires_grad(variant.decay ==
                                              ParamMode::Learned);
  p.decay.omega.node()->set_requires_grad(variant.context ==
                                          ParamMode::Learned);

  Rng rng(seed);
  p.l1 = uniform_affine(d, m, rng);
  p.l2 = uniform_affine(d, m, rng);
  p.l3 = uniform_affine(2 * m * c, d, rng);
  p.l4 = uniform_affine(d, d, rng);
  p.l5 = uniform_affine(d, d, rng);
  if (!variant.input_gate) {
    p.l2.w.node()->set_requires_grad(false);
    p.l2.b.node()->set_requires_grad(false);
  }
  if (!variant.output_gate) {
    for (Tensor t : {p.l4.w, p.l4.b, p.l5.w, p.l5.b}) {
      t.node()->set_requires_grad(false);
    }
  }
  return p;
}

}  // namespace

CellParams init(std::size_t d, std::size_t m, std::size_t c, std::size_t t_e,
                double beta, std::uint64_t seed, VariantFlags variant,
                std::size_t max_chunk_len) {
  validate_dims(d, m, c, variant);
  if (t_e < 2) throw ConfigError("init: t_e must be >= 2");
  if (!(beta > 0.0 && beta < 1.0)) {
    throw ConfigError("init: beta must lie in (0, 1)");
  }
  const double te = static_cast<double>(t_e);
  const double a_slow = std::log(1.0 / beta) / te;
  const double a_fast = DecayParams::compute_alpha_max(t_e);
  if (a_slow >= a_fast) {
    throw ConfigError(
        "init: decay schedule is empty, ln(1/beta)/t_e reaches the overflow "
        "clamp; raise t_e or beta");
  }
  const std::vector<double> alpha = endpoint_schedule(a_fast, a_slow, m);
  const std::vector<double> periods =
      c == 1 ? std::vector<double>{te} : endpoint_schedule(te, 1.0, c);
  return assemble(d, m, c, alpha, periods, seed, variant, max_chunk_len, t_e,
                  beta);
}

CellParams informed_init(std::size_t d, std::size_t m, std::size_t c,
                         std::pair<double, double> t_alpha_range,
                         std::pair<double, double> t_omega_range,
                         std::uint64_t seed, VariantFlags variant,
                         std::size_t max_chunk_len) {
  validate_dims(d, m, c, variant);
  auto check_range = [](std::pair<double, double> r, const char* name) {
    if (!(r.first > 0.0) || !(r.second >= r.first) ||
        !std::isfinite(r.second)) {
      throw ConfigError(std::string("informed_init: ") + name +
                        " needs 0 < lo <= hi");
    }
  };
  check_range(t_alpha_range, "t_alpha_range");
  check_range(t_omega_range, "t_omega_range");

  const double beta = 0.01;
  const double rate_fast = std::log(1.0 / beta) / t_alpha_range.first;
  const double rate_slow = std::log(1.0 / beta) / t_alpha_range.second;
  if (rate_slow > DecayParams::compute_alpha_max(max_chunk_len)) {
    throw ConfigError(
        "informed_init: whole t_alpha range sits above the overflow clamp; "
        "even the longest requested durability is unreachable");
  }
  const std::vector<double> alpha = endpoint_schedule(rate_fast, rate_slow, m);
  const std::vector<double> periods =
      c == 1 ? std::vector<double>{t_omega_range.second}
             : endpoint_schedule(t_omega_range.second, t_omega_range.first, c);
  return assemble(d, m, c, alpha, periods, seed, variant, max_chunk_len, 1024,
                  beta);
}

BatchedCellOutput forward_batched(const CellParams& p, const Tensor& X,
                                  const Tensor& carry, std::size_t chunk) {
  const CellDims& dm = p.dims;
  if (!X.defined() || X.rank() != 3 || X.dtype() != DType::Real64 ||
      X.shape()[2] != dm.d) {
    throw DimensionError("forward: X must be real (T, B, d) with d = " +
                         std::to_string(dm.d));
  }
  const std::size_t T = X.shape()[0], B = X.shape()[1];
  if (T < 1 || B < 1) throw DimensionError("forward: T and B must be >= 1");

  Tensor xf = ops::reshape(X, {T * B, dm.d});
  Tensor feat = ops::add(ops::matmul(xf, p.l1.w), p.l1.b);
  Tensor xt =
      p.variant.input_gate
          ? ops::mul(feat, ops::sigmoid(ops::add(ops::matmul(xf, p.l2.w),
                                                 p.l2.b)))
          : feat;
  Tensor u = ops::reshape(xt, {T, B, dm.m});

  const std::size_t cap = p.decay.max_chunk_len;
  BatchedScanResult agg =
      chunk == 0 && T <= cap
          ? scan_batched(p.decay, u, carry)
          : chunked_scan_batched(p.decay, u, carry, chunk == 0 ? cap : chunk);

  const std::size_t mc = dm.m * dm.c;
  Tensor re = ops::reshape(ops::real_part(agg.states), {T * B, mc});
  Tensor im = ops::reshape(ops::imag_part(agg.states), {T * B, mc});
  Tensor z = ops::add(ops::matmul(ops::concat(re, im, 1), p.l3.w), p.l3.b);
  Tensor zn = p.variant.layer_norm ? ops::layer_norm(z, kEpsLn) : z;

  Tensor y;
  if (p.variant.output_gate) {
    Tensor g = ops::sigmoid(ops::add(ops::matmul(xf, p.l4.w), p.l4.b));
    Tensor res = ops::add(ops::matmul(xf, p.l5.w), p.l5.b);
    y = ops::add(ops::mul(zn, g), ops::mul(res, ops::sub(Tensor::scalar(1.0), g)));
  } else {
    y = zn;
  }

  Tensor Y = ops::reshape(y, {T, B, dm.d});
  if (!Y.all_finite()) {
    const auto& vals = Y.rdata();
    std::size_t t = 0;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (!std::isfinite(vals[i])) {
        t = i / (B * dm.d);
        break;
      }
    }
    throw StabilityError("forward: non-finite output at timestep " +
                         std::to_string(t));
  }
  return {Y, agg.last};
}

CellOutput forward(const CellParams& p, const Tensor& X,
                   const RecurrentState& prev, std::size_t chunk) {
  if (!X.defined() || X.rank() != 2 || X.dtype() != DType::Real64) {
    throw DimensionError("forward: X must be real (T, d)");
  }
  const std::size_t T = X.shape()[0], d = X.shape()[1];
  if (!prev.S.defined() ||
      prev.S.shape() != Shape{p.dims.m, p.dims.c}) {
    throw DimensionError("forward: prev state must be (m, c)");
  }
  Tensor xb = ops::reshape(X, {T, 1, d});
  Tensor carry = ops::reshape(prev.S, {1, p.dims.m, p.dims.c});
  BatchedCellOutput out = forward_batched(p, xb, carry, chunk);
  CellOutput r;
  r.Y = ops::reshape(out.Y, {T, d});
  r.last.S = ops::reshape(out.last, {p.dims.m, p.dims.c});
  r.last.step = prev.step + T;
  return r;
}

Tensor trace_durability(const CellParams& p, double beta) {
  if (!(beta > 0.0 && beta < 1.0)) {
    throw ConfigError("trace_durability: beta must lie in (0, 1)");
  }
  const std::size_t m = p.dims.m, c = p.dims.c;
  const auto& raw = p.decay.alpha_raw.rdata();
  const double num = std::log(1.0 / beta);
  Tensor out = Tensor::real({m, c});
  auto& o = out.rdata();
  for (std::size_t j = 0; j < m; ++j) {
    const double a = std::min(std::abs(raw[j]), p.decay.alpha_max);
    const double t =
        a == 0.0 ? std::numeric_limits<double>::infinity() : num / a;
    for (std::size_t k = 0; k < c; ++k) o[j * c + k] = t;
  }
  return out;
}

Tensor context_period(const CellParams& p) {
  const std::size_t m = p.dims.m, c = p.dims.c;
  const auto& w = p.decay.omega.rdata();
  Tensor out = Tensor::real({m, c});
  auto& o = out.rdata();
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = 0; k < c; ++k) {
      const double wk = p.decay.hadamard() ? w[j * c + k] : w[k];
      o[j * c + k] = wk == 0.0 ? std::numeric_limits<double>::infinity()
                               : kTwoPi / std::abs(wk);
    }
  }
  return out;
}

std::vector<NamedTensor> named_arrays(const CellParams& p) {
  return {
      {"l1.w", p.l1.w}, {"l1.b", p.l1.b}, {"l2.w", p.l2.w}, {"l2.b", p.l2.b},
      {"l3.w", p.l3.w}, {"l3.b", p.l3.b}, {"l4.w", p.l4.w}, {"l4.b", p.l4.b},
      {"l5.w", p.l5.w}, {"l5.b", p.l5.b}, {"alpha_raw", p.decay.alpha_raw},
      {"omega", p.decay.omega},
  };
}

std::vector<Tensor> trainable_params(const CellParams& p) {
  std::vector<Tensor> out;
  for (const NamedTensor& nt : named_arrays(p)) {
    if (nt.t.requires_grad()) out.push_back(nt.t);
  }
  return out;
}

}  // namespace ffm
