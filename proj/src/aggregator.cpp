#include "ffm/aggregator.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ffm/ops.hpp"

namespace ffm {

namespace {

constexpr double kEpsClamp = 1e-3;

// alpha and omega broadcast to a common (m, c) complex argument -(alpha + i*omega).
struct GammaArg {
  Tensor alpha_mc;
  Tensor omega_mc;
};

GammaArg gamma_arg(const DecayParams& p) {
  const std::size_t m = p.m(), c = p.c();
  GammaArg a;
  a.alpha_mc = ops::add(ops::reshape(p.effective_alpha(), {m, 1}),
                        Tensor::real({1, c}));
  if (p.hadamard()) {
    a.omega_mc = ops::add(Tensor::real({m, 1}), p.omega);
  } else {
    a.omega_mc = ops::add(Tensor::real({m, 1}), ops::reshape(p.omega, {1, c}));
  }
  return a;
}

double max_effective_alpha(const DecayParams& p) {
  double mx = 0.0;
  for (double v : p.alpha_raw.rdata()) {
    mx = std::max(mx, std::min(std::abs(v), p.alpha_max));
  }
  return mx;
}

void validate_params(const DecayParams& p, const char* where) {
  if (!p.alpha_raw.defined() || !p.omega.defined() ||
      p.alpha_raw.rank() != 1 || p.alpha_raw.shape()[0] == 0) {
    throw ConfigError(std::string(where) + ": malformed decay parameters");
  }
  if (p.hadamard() && p.omega.shape()[0] != p.m()) {
    throw DimensionError(std::string(where) +
                         ": hadamard omega rows must match alpha length");
  }
}

}  // namespace

double DecayParams::compute_alpha_max(std::size_t max_chunk_len) {
  if (max_chunk_len == 0) throw ConfigError("max_chunk_len must be >= 1");
  return std::log(std::numeric_limits<double>::max()) /
             static_cast<double>(max_chunk_len) -
         kEpsClamp;
}

DecayParams DecayParams::create(std::vector<double> alpha_raw,
                                std::vector<double> omega,
                                std::size_t max_chunk_len) {
  DecayParams p;
  const std::size_t m = alpha_raw.size(), c = omega.size();
  if (m == 0 || c == 0) throw ConfigError("DecayParams: m and c must be >= 1");
  p.alpha_raw = Tensor::from_vector({m}, alpha_raw, true);
  p.omega = Tensor::from_vector({c}, omega, true);
  p.max_chunk_len = max_chunk_len;
  p.alpha_max = compute_alpha_max(max_chunk_len);
  return p;
}

DecayParams DecayParams::create_hadamard(std::vector<double> alpha_raw,
                                         std::vector<double> omega_rows,
                                         std::size_t m,
                                         std::size_t max_chunk_len) {
  DecayParams p;
  if (m == 0 || alpha_raw.size() != m || omega_rows.size() % m != 0) {
    throw ConfigError("DecayParams: bad hadamard parameter sizes");
  }
  const std::size_t c = omega_rows.size() / m;
  p.alpha_raw = Tensor::from_vector({m}, alpha_raw, true);
  p.omega = Tensor::from_vector({m, c}, omega_rows, true);
  p.max_chunk_len = max_chunk_len;
  p.alpha_max = compute_alpha_max(max_chunk_len);
  return p;
}

Tensor DecayParams::effective_alpha() const {
  return ops::clamp_max(ops::abs_op(alpha_raw), alpha_max);
}

RecurrentState RecurrentState::zeros(std::size_t m, std::size_t c) {
  return RecurrentState{Tensor::complex({m, c}), 0};
}

Tensor gamma_pow(const DecayParams& p, double t) {
  validate_params(p, "gamma_pow");
  if (!std::isfinite(t)) throw StabilityError("gamma_pow: t is not finite");
  const double amax = max_effective_alpha(p);
  const double lim = std::log(std::numeric_limits<double>::max());
  if (std::abs(t) * amax > lim) {
    throw StabilityError("gamma_pow: |t|*alpha = " +
                         std::to_string(std::abs(t) * amax) + " (alpha=" +
                         std::to_string(amax) + ", t=" + std::to_string(t) +
                         ") exceeds ln(F64_MAX)");
  }
  GammaArg a = gamma_arg(p);
  Tensor g = ops::exp_complex(ops::make_complex(ops::scale(a.alpha_mc, -t),
                                                ops::scale(a.omega_mc, -t)));
  if (!g.all_finite()) {
    throw StabilityError("gamma_pow: non-finite entries at t=" +
                         std::to_string(t));
  }
  return g;
}

RecurrentState step(const DecayParams& p, const Tensor& x_tilde,
                    const RecurrentState& prev) {
  validate_params(p, "step");
  const std::size_t m = p.m(), c = p.c();
  if (x_tilde.rank() != 1 || x_tilde.shape()[0] != m) {
    throw DimensionError("step: x_tilde must have shape (m)");
  }
  if (prev.S.shape() != Shape{m, c}) {
    throw DimensionError("step: state must have shape (m, c)");
  }
  if (!x_tilde.all_finite()) throw StabilityError("step: non-finite input");

  Tensor g1 = gamma_pow(p, 1.0);
  Tensor u = ops::add(ops::reshape(x_tilde, {m, 1}), Tensor::real({1, c}));
  Tensor s = ops::add(ops::mul(g1, prev.S), u);
  if (!s.all_finite()) throw StabilityError("step: non-finite state");
  return RecurrentState{s, prev.step + 1};
}

BatchedScanResult scan_batched(const DecayParams& p, const Tensor& u,
                               const Tensor& carry, ScanMode mode) {
  validate_params(p, "scan");
  const std::size_t m = p.m(), c = p.c();
  if (u.rank() != 3 || u.shape()[2] != m || u.dtype() != DType::Real64) {
    throw DimensionError("scan: inputs must be real (T, B, m)");
  }
  const std::size_t T = u.shape()[0], B = u.shape()[1];
  if (T == 0) throw DimensionError("scan: empty time axis");
  if (T > p.max_chunk_len) {
    throw ChunkBoundError("scan: T=" + std::to_string(T) +
                          " exceeds max chunk length " +
                          std::to_string(p.max_chunk_len) +
                          "; use chunked_scan");
  }
  if (carry.shape() != Shape{B, m, c} || carry.dtype() != DType::Complex128) {
    throw DimensionError("scan: carry must be complex (B, m, c)");
  }
  if (!u.all_finite()) throw StabilityError("scan: non-finite input");

  GammaArg a = gamma_arg(p);
  Tensor q = ops::exp_complex(ops::make_complex(ops::scale(a.alpha_mc, -1.0),
                                                ops::scale(a.omega_mc, -1.0)));
  Tensor qi = ops::exp_complex(ops::make_complex(a.alpha_mc, a.omega_mc));

  const long t = static_cast<long>(T) - 1;
  Tensor decay_in;   // multiplies inputs before the prefix sum
  Tensor rescale;    // multiplies prefix-sum rows
  if (mode == ScanMode::Stabilized) {
    // gamma^(t-j) damps every summand, gamma^(p-t) restores row p
    decay_in = ops::pow_range(q, T, t, -1);
    rescale = ops::pow_range(qi, T, t, -1);
  } else {
    // gamma^(-j) inside the sum grows without bound for large j*alpha
    decay_in = ops::pow_range(qi, T, 0, 1);
    rescale = ops::pow_range(q, T, 0, 1);
  }
  Tensor carry_decay = ops::pow_range(q, T, 1, 1);  // gamma^(p+1)

  Tensor damped = ops::mul(ops::reshape(decay_in, {T, 1, m, c}),
                           ops::reshape(u, {T, B, m, 1}));
  Tensor summed = ops::cumsum_scan(damped);
  Tensor restored = ops::mul(ops::reshape(rescale, {T, 1, m, c}), summed);
  Tensor carried = ops::mul(ops::reshape(carry_decay, {T, 1, m, c}),
                            ops::reshape(carry, {1, B, m, c}));
  Tensor states = ops::add(restored, carried);

  if (!states.all_finite()) {
    throw StabilityError("scan: non-finite state (T=" + std::to_string(T) +
                         ", max alpha=" + std::to_string(max_effective_alpha(p)) +
                         ")");
  }
  Tensor last = ops::reshape(ops::narrow(states, 0, T - 1, 1), {B, m, c});
  return BatchedScanResult{states, last};
}

BatchedScanResult chunked_scan_batched(const DecayParams& p, const Tensor& u,
                                       const Tensor& carry, std::size_t chunk,
                                       ScanMode mode) {
  validate_params(p, "chunked_scan");
  if (chunk < 1 || chunk > p.max_chunk_len) {
    throw ConfigError("chunked_scan: chunk must be in [1, " +
                      std::to_string(p.max_chunk_len) + "]");
  }
  if (u.rank() != 3) throw DimensionError("chunked_scan: inputs must be (T, B, m)");
  const std::size_t T = u.shape()[0];
  if (T == 0) throw DimensionError("chunked_scan: empty time axis");
  if (T <= chunk) return scan_batched(p, u, carry, mode);

  Tensor states;
  Tensor cur = carry;
  for (std::size_t start = 0; start < T; start += chunk) {
    const std::size_t len = std::min(chunk, T - start);
    BatchedScanResult seg =
        scan_batched(p, ops::narrow(u, 0, start, len), cur, mode);
    states = start == 0 ? seg.states : ops::concat(states, seg.states, 0);
    cur = seg.last;
  }
  return BatchedScanResult{states, cur};
}

namespace {

ScanResult wrap_single(const DecayParams& p, const Tensor& x_tilde,
                       const RecurrentState& prev, std::size_t chunk,
                       ScanMode mode) {
  const std::size_t m = p.m(), c = p.c();
  if (x_tilde.rank() != 2 || x_tilde.shape()[1] != m) {
    throw DimensionError("scan: x_tilde must have shape (T, m)");
  }
  if (prev.S.shape() != Shape{m, c}) {
    throw DimensionError("scan: state must have shape (m, c)");
  }
  const std::size_t T = x_tilde.shape()[0];
  Tensor u = ops::reshape(x_tilde, {T, 1, m});
  Tensor carry = ops::reshape(prev.S, {1, m, c});
  BatchedScanResult r = chunk == 0 ? scan_batched(p, u, carry, mode)
                                   : chunked_scan_batched(p, u, carry, chunk, mode);
  ScanResult out;
  out.states = ops::reshape(r.states, {T, m, c});
  out.last = RecurrentState{ops::reshape(r.last, {m, c}), prev.step + T};
  return out;
}

}  // namespace

ScanResult scan(const DecayParams& p, const Tensor& x_tilde,
                const RecurrentState& prev, ScanMode mode) {
  return wrap_single(p, x_tilde, prev, 0, mode);
}

ScanResult chunked_scan(const DecayParams& p, const Tensor& x_tilde,
                        const RecurrentState& prev, std::size_t chunk,
                        ScanMode mode) {
  return wrap_single(p, x_tilde, prev, chunk, mode);
}

}  // namespace ffm
