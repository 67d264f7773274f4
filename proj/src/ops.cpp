#include "ffm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace ffm::ops {

namespace {

constexpr DType kReal = DType::Real64;
constexpr DType kCplx = DType::Complex128;

// Right-aligned broadcast plan: per-dimension input strides, 0 where the
// input extent is 1 against a larger output extent.
struct BPlan {
  Shape out;
  std::vector<std::size_t> sa;
  std::vector<std::size_t> sb;
  bool same = false;
};

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 0);
  std::size_t acc = 1;
  for (std::size_t d = s.size(); d-- > 0;) {
    st[d] = acc;
    acc *= s[d];
  }
  return st;
}

BPlan plan_broadcast(const Shape& a, const Shape& b) {
  BPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  p.sa.assign(r, 0);
  p.sb.assign(r, 0);
  const auto as = row_major_strides(a);
  const auto bs = row_major_strides(b);
  for (std::size_t d = 0; d < r; ++d) {
    const std::size_t od = r - 1 - d;
    const std::size_t ea = d < a.size() ? a[a.size() - 1 - d] : 1;
    const std::size_t eb = d < b.size() ? b[b.size() - 1 - d] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " +
                           shape_str(b));
    }
    p.out[od] = std::max(ea, eb);
    p.sa[od] = (d < a.size() && ea != 1) ? as[a.size() - 1 - d] : 0;
    p.sb[od] = (d < b.size() && eb != 1) ? bs[b.size() - 1 - d] : 0;
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <class F>
void for_each_bcast(const BPlan& p, F&& f) {
  const std::size_t n = numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = p.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ai = 0, bi = 0;
  for (std::size_t oi = 0; oi < n; ++oi) {
    f(oi, ai, bi);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ai += p.sa[d];
      bi += p.sb[d];
      if (idx[d] < p.out[d]) break;
      idx[d] = 0;
      ai -= p.sa[d] * p.out[d];
      bi -= p.sb[d] * p.out[d];
    }
  }
}

bool want_grad(const Tensor& a) { return Tape::active() && a.requires_grad(); }
bool want_grad(const Tensor& a, const Tensor& b) {
  return Tape::active() && (a.requires_grad() || b.requires_grad());
}

cplx cval(const Tensor& t, std::size_t i) {
  return t.dtype() == kCplx ? t.cdata()[i] : cplx(t.rdata()[i], 0.0);
}

void require_real(const Tensor& t, const char* op) {
  if (t.dtype() != kReal) {
    throw DimensionError(std::string(op) + " expects a real tensor");
  }
}

void require_complex(const Tensor& t, const char* op) {
  if (t.dtype() != kCplx) {
    throw DimensionError(std::string(op) + " expects a complex tensor");
  }
}

enum class BinKind { Add, Sub, Mul };

Tensor binary_op(BinKind kind, const Tensor& a, const Tensor& b) {
  BPlan p = plan_broadcast(a.shape(), b.shape());
  const bool cx = a.dtype() == kCplx || b.dtype() == kCplx;
  const bool rg = want_grad(a, b);
  Tensor out = cx ? Tensor::complex(p.out, rg) : Tensor::real(p.out, rg);

  if (cx) {
    auto& o = out.cdata();
    for_each_bcast(p, [&](std::size_t oi, std::size_t ai, std::size_t bi) {
      const cplx av = cval(a, ai), bv = cval(b, bi);
      switch (kind) {
        case BinKind::Add: o[oi] = av + bv; break;
        case BinKind::Sub: o[oi] = av - bv; break;
        case BinKind::Mul: o[oi] = av * bv; break;
      }
    });
  } else {
    const auto& ad = a.rdata();
    const auto& bd = b.rdata();
    auto& o = out.rdata();
    for_each_bcast(p, [&](std::size_t oi, std::size_t ai, std::size_t bi) {
      switch (kind) {
        case BinKind::Add: o[oi] = ad[ai] + bd[bi]; break;
        case BinKind::Sub: o[oi] = ad[ai] - bd[bi]; break;
        case BinKind::Mul: o[oi] = ad[ai] * bd[bi]; break;
      }
    });
  }
  apply_precision_mode(*out.node());

  if (rg) {
    auto pa = a.ptr();
    auto pb = b.ptr();
    auto po = out.ptr();
    Tape::active()->record([kind, pa, pb, po, p, cx] {
      const double bsign = kind == BinKind::Sub ? -1.0 : 1.0;
      const bool ga = pa->requires_grad();
      const bool gb = pb->requires_grad();
      if (cx) {
        const auto& go = po->cgrad();
        auto accum = [&](std::size_t oi, std::size_t ai, std::size_t bi) {
          if (kind == BinKind::Mul) {
            const cplx av = pa->dtype() == kCplx ? pa->cdata()[ai]
                                                 : cplx(pa->rdata()[ai], 0.0);
            const cplx bv = pb->dtype() == kCplx ? pb->cdata()[bi]
                                                 : cplx(pb->rdata()[bi], 0.0);
            if (ga) {
              const cplx g = go[oi] * std::conj(bv);
              if (pa->dtype() == kCplx) pa->cgrad()[ai] += g;
              else pa->rgrad()[ai] += g.real();
            }
            if (gb) {
              const cplx g = go[oi] * std::conj(av);
              if (pb->dtype() == kCplx) pb->cgrad()[bi] += g;
              else pb->rgrad()[bi] += g.real();
            }
          } else {
            if (ga) {
              if (pa->dtype() == kCplx) pa->cgrad()[ai] += go[oi];
              else pa->rgrad()[ai] += go[oi].real();
            }
            if (gb) {
              if (pb->dtype() == kCplx) pb->cgrad()[bi] += bsign * go[oi];
              else pb->rgrad()[bi] += bsign * go[oi].real();
            }
          }
        };
        for_each_bcast(p, accum);
      } else {
        const auto& go = po->rgrad();
        for_each_bcast(p, [&](std::size_t oi, std::size_t ai, std::size_t bi) {
          if (kind == BinKind::Mul) {
            if (ga) pa->rgrad()[ai] += go[oi] * pb->rdata()[bi];
            if (gb) pb->rgrad()[bi] += go[oi] * pa->rdata()[ai];
          } else {
            if (ga) pa->rgrad()[ai] += go[oi];
            if (gb) pb->rgrad()[bi] += bsign * go[oi];
          }
        });
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(BinKind::Add, a, b);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(BinKind::Sub, a, b);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(BinKind::Mul, a, b);
}

Tensor scale(const Tensor& a, double s) {
  const bool rg = want_grad(a);
  Tensor out;
  if (a.dtype() == kCplx) {
    out = Tensor::complex(a.shape(), rg);
    auto& o = out.cdata();
    const auto& x = a.cdata();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = s * x[i];
  } else {
    out = Tensor::real(a.shape(), rg);
    auto& o = out.rdata();
    const auto& x = a.rdata();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = s * x[i];
  }
  apply_precision_mode(*out.node());
  if (rg) {
    auto pa = a.ptr();
    auto po = out.ptr();
    Tape::active()->record([pa, po, s] {
      if (pa->dtype() == kCplx) {
        const auto& go = po->cgrad();
        auto& g = pa->cgrad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * go[i];
      } else {
        const auto& go = po->rgrad();
        auto& g = pa->rgrad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * go[i];
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_real(a, "matmul");
  require_real(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  const std::size_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
  const bool rg = want_grad(a, b);
  Tensor out = Tensor::real({M, N}, rg);
  {
    const auto& A = a.rdata();
    const auto& B = b.rdata();
    auto& O = out.rdata();
    for (std::size_t i = 0; i < M; ++i) {
      for (std::size_t k = 0; k < K; ++k) {
        const double av = A[i * K + k];
        if (av == 0.0) continue;
        for (std::size_t n = 0; n < N; ++n) O[i * N + n] += av * B[k * N + n];
      }
    }
  }
  apply_precision_mode(*out.node());
  if (rg) {
    auto pa = a.ptr();
    auto pb = b.ptr();
    auto po = out.ptr();
    Tape::active()->record([pa, pb, po, M, K, N] {
      const auto& gO = po->rgrad();
      if (pa->requires_grad()) {
        auto& gA = pa->rgrad();
        const auto& B = pb->rdata();
        for (std::size_t i = 0; i < M; ++i) {
          for (std::size_t n = 0; n < N; ++n) {
            const double g = gO[i * N + n];
            if (g == 0.0) continue;
            for (std::size_t k = 0; k < K; ++k) gA[i * K + k] += g * B[k * N + n];
          }
        }
      }
      if (pb->requires_grad()) {
        auto& gB = pb->rgrad();
        const auto& A = pa->rdata();
        for (std::size_t i = 0; i < M; ++i) {
          for (std::size_t k = 0; k < K; ++k) {
            const double av = A[i * K + k];
            if (av == 0.0) continue;
            for (std::size_t n = 0; n < N; ++n) gB[k * N + n] += av * gO[i * N + n];
          }
        }
      }
    });
  }
  return out;
}

namespace {

double sigmoid_stable(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <class Fwd, class Bwd>
Tensor unary_real(const Tensor& a, const char* name, Fwd fwd, Bwd bwd) {
  require_real(a, name);
  const bool rg = want_grad(a);
  Tensor out = Tensor::real(a.shape(), rg);
  const auto& x = a.rdata();
  auto& o = out.rdata();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = fwd(x[i]);
  apply_precision_mode(*out.node());
  if (rg) {
    auto pa = a.ptr();
    auto po = out.ptr();
    Tape::active()->record([pa, po, bwd] {
      const auto& go = po->rgrad();
      const auto& x = pa->rdata();
      const auto& y = po->rdata();
      auto& g = pa->rgrad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * bwd(x[i], y[i]);
    });
  }
  return out;
}

}  // namespace

Tensor sigmoid(const Tensor& a) {
  return unary_real(
      a, "sigmoid", [](double x) { return sigmoid_stable(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& a) {
  return unary_real(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor abs_op(const Tensor& a) {
  return unary_real(
      a, "abs", [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp_max(const Tensor& a, double cap) {
  return unary_real(
      a, "clamp_max", [cap](double x) { return std::min(x, cap); },
      [cap](double x, double) { return x < cap ? 1.0 : 0.0; });
}

Tensor make_complex(const Tensor& re, const Tensor& im) {
  require_real(re, "make_complex");
  require_real(im, "make_complex");
  if (re.shape() != im.shape()) {
    throw DimensionError("make_complex: shape mismatch " +
                         shape_str(re.shape()) + " vs " + shape_str(im.shape()));
  }
  const bool rg = want_grad(re, im);
  Tensor out = Tensor::complex(re.shape(), rg);
  const auto& r = re.rdata();
  const auto& m = im.rdata();
  auto& o = out.cdata();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = cplx(r[i], m[i]);
  apply_precision_mode(*out.node());
  if (rg) {
    auto pr = re.ptr();
    auto pi = im.ptr();
    auto po = out.ptr();
    Tape::active()->record([pr, pi, po] {
      const auto& go = po->cgrad();
      if (pr->requires_grad()) {
        auto& g = pr->rgrad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i].real();
      }
      if (pi->requires_grad()) {
        auto& g = pi->rgrad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i].imag();
      }
    });
  }
  return out;
}

Tensor real_part(const Tensor& z) {
  require_complex(z, "real_part");
  const bool rg = want_grad(z);
  Tensor out = Tensor::real(z.shape(), rg);
  const auto& x = z.cdata();
  auto& o = out.rdata();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i].real();
  apply_precision_mode(*out.node());
  if (rg) {
    auto pz = z.ptr();
    auto po = out.ptr();
    Tape::active()->record([pz, po] {
      const auto& go = po->rgrad();
      auto& g = pz->cgrad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += cplx(go[i], 0.0);
    });
  }
  return out;
}

Tensor imag_part(const Tensor& z) {
  require_complex(z, "imag_part");
  const bool rg = want_grad(z);
  Tensor out = Tensor::real(z.shape(), rg);
  const auto& x = z.cdata();
  auto& o = out.rdata();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i].imag();
  apply_precision_mode(*out.node());
  if (rg) {
    auto pz = z.ptr();
    auto po = out.ptr();
    Tape::active()->record([pz, po] {
      const auto& go = po->rgrad();
      auto& g = pz->cgrad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += cplx(0.0, go[i]);
    });
  }
  return out;
}

Tensor exp_complex(const Tensor& z) {
  require_complex(z, "exp_complex");
  const bool rg = want_grad(z);
  Tensor out = Tensor::complex(z.shape(), rg);
  const auto& x = z.cdata();
  auto& o = out.cdata();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(x[i]);
  apply_precision_mode(*out.node());
  if (rg) {
    auto pz = z.ptr();
    auto po = out.ptr();
    Tape::active()->record([pz, po] {
      const auto& go = po->cgrad();
      const auto& y = po->cdata();
      auto& g = pz->cgrad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * std::conj(y[i]);
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& a, double eps) {
  require_real(a, "layer_norm");
  if (a.rank() < 1 || a.shape().back() < 1) {
    throw DimensionError("layer_norm: last dimension must be >= 1");
  }
  const std::size_t F = a.shape().back();
  const std::size_t rows = a.size() / F;
  const bool rg = want_grad(a);
  Tensor out = Tensor::real(a.shape(), rg);
  auto invstd = std::make_shared<std::vector<double>>(rows);
  const auto& x = a.rdata();
  auto& y = out.rdata();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * F;
    double mean = 0.0;
    for (std::size_t j = 0; j < F; ++j) mean += xr[j];
    mean /= static_cast<double>(F);
    double var = 0.0;
    for (std::size_t j = 0; j < F; ++j) {
      const double d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(F);
    const double is = 1.0 / std::sqrt(var + eps);
    (*invstd)[r] = is;
    for (std::size_t j = 0; j < F; ++j) y[r * F + j] = (xr[j] - mean) * is;
  }
  apply_precision_mode(*out.node());
  if (rg) {
    auto pa = a.ptr();
    auto po = out.ptr();
    Tape::active()->record([pa, po, invstd, rows, F] {
      const auto& go = po->rgrad();
      const auto& y = po->rdata();
      auto& g = pa->rgrad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = go.data() + r * F;
        const double* yr = y.data() + r * F;
        double mg = 0.0, mgy = 0.0;
        for (std::size_t j = 0; j < F; ++j) {
          mg += gr[j];
          mgy += gr[j] * yr[j];
        }
        mg /= static_cast<double>(F);
        mgy /= static_cast<double>(F);
        const double is = (*invstd)[r];
        for (std::size_t j = 0; j < F; ++j) {
          g[r * F + j] += (gr[j] - mg - yr[j] * mgy) * is;
        }
      }
    });
  }
  return out;
}

namespace {

// Inclusive prefix sum over rows: a local pass per block, a sequential
// carry across block boundaries, then a parallel offset fix-up.
template <class T>
void blocked_cumsum(const std::vector<T>& in, std::vector<T>& out,
                    std::size_t rows, std::size_t inner, int workers) {
  auto local_sum = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t j = 0; j < inner; ++j) out[lo * inner + j] = in[lo * inner + j];
    for (std::size_t r = lo + 1; r < hi; ++r) {
      const T* prev = out.data() + (r - 1) * inner;
      const T* xr = in.data() + r * inner;
      T* orow = out.data() + r * inner;
      for (std::size_t j = 0; j < inner; ++j) orow[j] = prev[j] + xr[j];
    }
  };

  const std::size_t W = static_cast<std::size_t>(workers);
  if (W <= 1 || rows < 2 * W) {
    local_sum(0, rows);
    return;
  }

  std::vector<std::size_t> bounds(W + 1);
  for (std::size_t w = 0; w <= W; ++w) bounds[w] = rows * w / W;

  {
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < W; ++w) {
      pool.emplace_back(local_sum, bounds[w], bounds[w + 1]);
    }
    local_sum(bounds[0], bounds[1]);
    for (auto& t : pool) t.join();
  }

  // offsets[w] = total of all blocks before w
  std::vector<T> offsets(W * inner, T{});
  for (std::size_t w = 1; w < W; ++w) {
    const T* prev_off = offsets.data() + (w - 1) * inner;
    const T* prev_last = out.data() + (bounds[w] - 1) * inner;
    T* off = offsets.data() + w * inner;
    for (std::size_t j = 0; j < inner; ++j) off[j] = prev_off[j] + prev_last[j];
  }

  auto add_offset = [&](std::size_t w) {
    const T* off = offsets.data() + w * inner;
    for (std::size_t r = bounds[w]; r < bounds[w + 1]; ++r) {
      T* orow = out.data() + r * inner;
      for (std::size_t j = 0; j < inner; ++j) orow[j] += off[j];
    }
  };
  {
    std::vector<std::thread> pool;
    for (std::size_t w = 2; w < W; ++w) pool.emplace_back(add_offset, w);
    add_offset(1);
    for (auto& t : pool) t.join();
  }
}

template <class T>
void suffix_sum_accumulate(const std::vector<T>& go, std::vector<T>& gin,
                           std::size_t rows, std::size_t inner) {
  std::vector<T> acc(inner, T{});
  for (std::size_t r = rows; r-- > 0;) {
    const T* gr = go.data() + r * inner;
    T* dst = gin.data() + r * inner;
    for (std::size_t j = 0; j < inner; ++j) {
      acc[j] += gr[j];
      dst[j] += acc[j];
    }
  }
}

}  // namespace

Tensor cumsum_scan(const Tensor& a) {
  if (a.rank() < 1 || a.shape()[0] == 0) {
    throw DimensionError("cumsum_scan: empty time axis");
  }
  const std::size_t rows = a.shape()[0];
  const std::size_t inner = a.size() / rows;
  const bool rg = want_grad(a);
  const int W = worker_count();
  Tensor out;
  if (a.dtype() == kCplx) {
    out = Tensor::complex(a.shape(), rg);
    blocked_cumsum(a.cdata(), out.cdata(), rows, inner, W);
  } else {
    out = Tensor::real(a.shape(), rg);
    blocked_cumsum(a.rdata(), out.rdata(), rows, inner, W);
  }
  apply_precision_mode(*out.node());
  if (rg) {
    auto pa = a.ptr();
    auto po = out.ptr();
    Tape::active()->record([pa, po, rows, inner] {
      if (pa->dtype() == kCplx) {
        suffix_sum_accumulate(po->cgrad(), pa->cgrad(), rows, inner);
      } else {
        suffix_sum_accumulate(po->rgrad(), pa->rgrad(), rows, inner);
      }
    });
  }
  return out;
}

Tensor pow_range(const Tensor& base, std::size_t n, long e0, int estep) {
  require_complex(base, "pow_range");
  if (n == 0) throw DimensionError("pow_range: n must be >= 1");
  if (estep != 1 && estep != -1) {
    throw DimensionError("pow_range: estep must be +1 or -1");
  }
  const long elast = e0 + estep * static_cast<long>(n - 1);
  if (e0 < 0 || elast < 0) {
    throw DimensionError("pow_range: exponents must stay nonnegative");
  }
  const std::size_t inner = base.size();
  Shape os;
  os.reserve(base.rank() + 1);
  os.push_back(n);
  for (std::size_t d : base.shape()) os.push_back(d);

  const bool rg = want_grad(base);
  Tensor out = Tensor::complex(os, rg);
  const auto& q = base.cdata();
  auto& o = out.cdata();

  // fill rows in ascending-exponent order: starting row and direction depend
  // on estep, values advance by one multiplication with the base
  const std::size_t start_row = estep == 1 ? 0 : n - 1;
  const long emin = estep == 1 ? e0 : elast;
  {
    // base^emin by repeated squaring
    std::vector<cplx> acc(inner, cplx(1.0, 0.0));
    std::vector<cplx> sq(q.begin(), q.end());
    unsigned long e = static_cast<unsigned long>(emin);
    while (e) {
      if (e & 1) {
        for (std::size_t i = 0; i < inner; ++i) acc[i] *= sq[i];
      }
      e >>= 1;
      if (e) {
        for (std::size_t i = 0; i < inner; ++i) sq[i] *= sq[i];
      }
    }
    std::copy(acc.begin(), acc.end(), o.begin() + start_row * inner);
  }
  for (std::size_t s = 1; s < n; ++s) {
    const std::size_t row = estep == 1 ? s : n - 1 - s;
    const std::size_t prev = estep == 1 ? row - 1 : row + 1;
    const cplx* pr = o.data() + prev * inner;
    cplx* cur = o.data() + row * inner;
    for (std::size_t i = 0; i < inner; ++i) cur[i] = pr[i] * q[i];
  }
  apply_precision_mode(*out.node());

  if (rg) {
    auto pb = base.ptr();
    auto po = out.ptr();
    Tape::active()->record([pb, po, n, e0, estep, inner] {
      // d out[k]/d base = e(k) * base^(e(k)-1) = e(k) * out[k] / base
      const auto& go = po->cgrad();
      const auto& y = po->cdata();
      const auto& q = pb->cdata();
      auto& g = pb->cgrad();
      std::vector<cplx> acc(inner, cplx(0.0, 0.0));
      for (std::size_t k = 0; k < n; ++k) {
        const double e = static_cast<double>(e0 + estep * static_cast<long>(k));
        if (e == 0.0) continue;
        const cplx* yr = y.data() + k * inner;
        const cplx* gr = go.data() + k * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          acc[i] += e * gr[i] * std::conj(yr[i]);
        }
      }
      for (std::size_t i = 0; i < inner; ++i) g[i] += acc[i] / std::conj(q[i]);
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " +
                         shape_str(shape) + " changes element count");
  }
  const bool rg = want_grad(a);
  Tensor out;
  if (a.dtype() == kCplx) {
    out = Tensor::complex(std::move(shape), rg);
    out.cdata() = a.cdata();
  } else {
    out = Tensor::real(std::move(shape), rg);
    out.rdata() = a.rdata();
  }
  if (rg) {
    auto pa = a.ptr();
    auto po = out.ptr();
    Tape::active()->record([pa, po] {
      if (pa->dtype() == kCplx) {
        const auto& go = po->cgrad();
        auto& g = pa->cgrad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
      } else {
        const auto& go = po->rgrad();
        auto& g = pa->rgrad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
      }
    });
  }
  return out;
}

namespace {

struct AxisSplit {
  std::size_t outer;
  std::size_t inner;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r{1, 1};
  for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}

template <class T>
void copy_block(const std::vector<T>& src, std::size_t src_row_len,
                std::size_t src_off, std::vector<T>& dst,
                std::size_t dst_row_len, std::size_t dst_off,
                std::size_t outer, std::size_t block) {
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < block; ++i) {
      dst[o * dst_row_len + dst_off + i] = src[o * src_row_len + src_off + i];
    }
  }
}

template <class T>
void accum_block(const std::vector<T>& src, std::size_t src_row_len,
                 std::size_t src_off, std::vector<T>& dst,
                 std::size_t dst_row_len, std::size_t dst_off,
                 std::size_t outer, std::size_t block) {
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < block; ++i) {
      dst[o * dst_row_len + dst_off + i] += src[o * src_row_len + src_off + i];
    }
  }
}

}  // namespace

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  if (a.dtype() != b.dtype()) throw DimensionError("concat: dtype mismatch");
  if (a.rank() != b.rank() || axis >= a.rank()) {
    throw DimensionError("concat: rank mismatch or bad axis");
  }
  for (std::size_t d = 0; d < a.rank(); ++d) {
    if (d != axis && a.shape()[d] != b.shape()[d]) {
      throw DimensionError("concat: shapes differ off-axis: " +
                           shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
  }
  Shape os = a.shape();
  os[axis] += b.shape()[axis];
  const AxisSplit sp = split_at(os, axis);
  const std::size_t ab = a.shape()[axis] * sp.inner;
  const std::size_t bb = b.shape()[axis] * sp.inner;
  const std::size_t ob = os[axis] * sp.inner;
  const bool rg = want_grad(a, b);
  Tensor out;
  if (a.dtype() == kCplx) {
    out = Tensor::complex(os, rg);
    copy_block(a.cdata(), ab, 0, out.cdata(), ob, 0, sp.outer, ab);
    copy_block(b.cdata(), bb, 0, out.cdata(), ob, ab, sp.outer, bb);
  } else {
    out = Tensor::real(os, rg);
    copy_block(a.rdata(), ab, 0, out.rdata(), ob, 0, sp.outer, ab);
    copy_block(b.rdata(), bb, 0, out.rdata(), ob, ab, sp.outer, bb);
  }
  if (rg) {
    auto pa = a.ptr();
    auto pb = b.ptr();
    auto po = out.ptr();
    const std::size_t outer = sp.outer;
    Tape::active()->record([pa, pb, po, outer, ab, bb, ob] {
      if (po->dtype() == kCplx) {
        if (pa->requires_grad())
          accum_block(po->cgrad(), ob, 0, pa->cgrad(), ab, 0, outer, ab);
        if (pb->requires_grad())
          accum_block(po->cgrad(), ob, ab, pb->cgrad(), bb, 0, outer, bb);
      } else {
        if (pa->requires_grad())
          accum_block(po->rgrad(), ob, 0, pa->rgrad(), ab, 0, outer, ab);
        if (pb->requires_grad())
          accum_block(po->rgrad(), ob, ab, pb->rgrad(), bb, 0, outer, bb);
      }
    });
  }
  return out;
}

Tensor stack0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("stack0: needs at least one tensor");
  const Shape& s0 = parts[0].shape();
  const DType dt = parts[0].dtype();
  bool rg = false;
  for (const Tensor& p : parts) {
    if (!p.defined() || p.shape() != s0 || p.dtype() != dt) {
      throw DimensionError("stack0: parts must share shape and dtype");
    }
    rg = rg || p.requires_grad();
  }
  rg = rg && Tape::active() != nullptr;
  Shape os;
  os.reserve(s0.size() + 1);
  os.push_back(parts.size());
  os.insert(os.end(), s0.begin(), s0.end());
  const std::size_t inner = numel(s0);
  Tensor out;
  if (dt == kCplx) {
    out = Tensor::complex(os, rg);
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const auto& src = parts[i].cdata();
      std::copy(src.begin(), src.end(), out.cdata().begin() + i * inner);
    }
  } else {
    out = Tensor::real(os, rg);
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const auto& src = parts[i].rdata();
      std::copy(src.begin(), src.end(), out.rdata().begin() + i * inner);
    }
  }
  if (rg) {
    std::vector<std::shared_ptr<TensorData>> ps;
    ps.reserve(parts.size());
    for (const Tensor& p : parts) ps.push_back(p.ptr());
    auto po = out.ptr();
    Tape::active()->record([ps, po, inner] {
      for (std::size_t i = 0; i < ps.size(); ++i) {
        if (!ps[i]->requires_grad()) continue;
        if (po->dtype() == kCplx) {
          const auto& go = po->cgrad();
          auto& g = ps[i]->cgrad();
          for (std::size_t j = 0; j < inner; ++j) g[j] += go[i * inner + j];
        } else {
          const auto& go = po->rgrad();
          auto& g = ps[i]->rgrad();
          for (std::size_t j = 0; j < inner; ++j) g[j] += go[i * inner + j];
        }
      }
    });
  }
  return out;
}

Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start,
              std::size_t len) {
  if (axis >= a.rank() || start + len > a.shape()[axis] || len == 0) {
    throw DimensionError("narrow: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for " +
                         shape_str(a.shape()) + " axis " + std::to_string(axis));
  }
  Shape os = a.shape();
  os[axis] = len;
  const AxisSplit sp = split_at(a.shape(), axis);
  const std::size_t arow = a.shape()[axis] * sp.inner;
  const std::size_t orow = len * sp.inner;
  const std::size_t off = start * sp.inner;
  const bool rg = want_grad(a);
  Tensor out;
  if (a.dtype() == kCplx) {
    out = Tensor::complex(os, rg);
    copy_block(a.cdata(), arow, off, out.cdata(), orow, 0, sp.outer, orow);
  } else {
    out = Tensor::real(os, rg);
    copy_block(a.rdata(), arow, off, out.rdata(), orow, 0, sp.outer, orow);
  }
  if (rg) {
    auto pa = a.ptr();
    auto po = out.ptr();
    const std::size_t outer = sp.outer;
    Tape::active()->record([pa, po, outer, arow, orow, off] {
      if (pa->dtype() == kCplx) {
        accum_block(po->cgrad(), orow, 0, pa->cgrad(), arow, off, outer, orow);
      } else {
        accum_block(po->rgrad(), orow, 0, pa->rgrad(), arow, off, outer, orow);
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  require_real(a, "sum_all");
  const bool rg = want_grad(a);
  Tensor out = Tensor::real({1}, rg);
  double s = 0.0;
  for (double v : a.rdata()) s += v;
  out.rdata()[0] = s;
  apply_precision_mode(*out.node());
  if (rg) {
    auto pa = a.ptr();
    auto po = out.ptr();
    Tape::active()->record([pa, po] {
      const double g = po->rgrad()[0];
      auto& ga = pa->rgrad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

namespace {

double log_sum_exp(const double* x, std::size_t n) {
  double mx = x[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += std::exp(x[j] - mx);
  return mx + std::log(s);
}

}  // namespace

Tensor masked_cross_entropy(const Tensor& logits,
                            const std::vector<std::size_t>& targets,
                            const std::vector<std::uint8_t>& mask) {
  require_real(logits, "masked_cross_entropy");
  if (logits.rank() != 2) {
    throw DimensionError("masked_cross_entropy: logits must be (N, V)");
  }
  const std::size_t N = logits.shape()[0], V = logits.shape()[1];
  if (targets.size() != N || mask.size() != N) {
    throw DimensionError("masked_cross_entropy: targets/mask length mismatch");
  }
  std::size_t M = 0;
  for (std::uint8_t m : mask) M += m ? 1 : 0;
  if (M == 0) throw ConfigError("masked_cross_entropy: mask selects no rows");

  const bool rg = want_grad(logits);
  Tensor out = Tensor::real({1}, rg);
  const auto& x = logits.rdata();
  double loss = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    if (!mask[i]) continue;
    if (targets[i] >= V) {
      throw DimensionError("masked_cross_entropy: target out of range");
    }
    const double* row = x.data() + i * V;
    loss += log_sum_exp(row, V) - row[targets[i]];
  }
  out.rdata()[0] = loss / static_cast<double>(M);
  apply_precision_mode(*out.node());
  if (rg) {
    auto pl = logits.ptr();
    auto po = out.ptr();
    auto tg = std::make_shared<std::vector<std::size_t>>(targets);
    auto mk = std::make_shared<std::vector<std::uint8_t>>(mask);
    Tape::active()->record([pl, po, tg, mk, N, V, M] {
      const double g = po->rgrad()[0] / static_cast<double>(M);
      const auto& x = pl->rdata();
      auto& gx = pl->rgrad();
      for (std::size_t i = 0; i < N; ++i) {
        if (!(*mk)[i]) continue;
        const double* row = x.data() + i * V;
        const double lse = log_sum_exp(row, V);
        for (std::size_t j = 0; j < V; ++j) {
          const double p = std::exp(row[j] - lse);
          gx[i * V + j] += g * (p - (j == (*tg)[i] ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

double masked_accuracy(const Tensor& logits,
                       const std::vector<std::size_t>& targets,
                       const std::vector<std::uint8_t>& mask) {
  require_real(logits, "masked_accuracy");
  if (logits.rank() != 2) {
    throw DimensionError("masked_accuracy: logits must be (N, V)");
  }
  const std::size_t N = logits.shape()[0], V = logits.shape()[1];
  if (targets.size() != N || mask.size() != N) {
    throw DimensionError("masked_accuracy: targets/mask length mismatch");
  }
  const auto& x = logits.rdata();
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < N; ++i) {
    if (!mask[i]) continue;
    const double* row = x.data() + i * V;
    std::size_t best = 0;
    for (std::size_t j = 1; j < V; ++j) {
      if (row[j] > row[best]) best = j;
    }
    hits += best == targets[i] ? 1 : 0;
    ++total;
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

}  // namespace ffm::ops
