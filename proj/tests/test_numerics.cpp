#include <cmath>
#include <complex>
#include <vector>

#include "doctest.h"
#include "ffm/alloc_stats.hpp"
#include "ffm/ops.hpp"
#include "ffm/rng.hpp"
#include "gradcheck.hpp"

using namespace ffm;
using testsupport::check_grads;
using testsupport::NamedParam;

namespace {

Tensor random_real(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                   bool requires_grad = false) {
  Tensor t = Tensor::real(std::move(shape), requires_grad);
  for (double& v : t.rdata()) v = rng.uniform(lo, hi);
  return t;
}

Tensor random_complex(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::complex(std::move(shape));
  for (cplx& v : t.cdata()) v = cplx(rng.uniform(lo, hi), rng.uniform(lo, hi));
  return t;
}

}  // namespace

TEST_CASE("matmul identity and annihilator") {
  Tensor eye = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
  Tensor v = Tensor::from_vector({2, 1}, {3, 4});
  Tensor r = ops::matmul(eye, v);
  CHECK(r.rdata() == std::vector<double>{3, 4});

  Rng rng(7);
  Tensor zero = Tensor::real({2, 2});
  Tensor b = random_real({2, 3}, rng);
  Tensor z = ops::matmul(zero, b);
  for (double x : z.rdata()) CHECK(x == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle exactly") {
  Rng rng(11);
  Tensor a = random_real({3, 4}, rng);
  Tensor b = random_real({4, 2}, rng);
  Tensor r = ops::matmul(a, b);

  std::vector<double> expect(3 * 2, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        acc += a.rdata()[i * 4 + k] * b.rdata()[k * 2 + j];
      }
      expect[i * 2 + j] = acc;
    }
  }
  // both sides accumulate in k-order, so the comparison is exact
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(r.rdata()[i] == doctest::Approx(expect[i]).epsilon(1e-15));
  }
}

TEST_CASE("matmul rejects shape mismatch") {
  Tensor a = Tensor::real({2, 3});
  Tensor b = Tensor::real({2, 3});
  CHECK_THROWS_AS(ops::matmul(a, b), DimensionError);
}

TEST_CASE("elementwise basics") {
  CHECK(ops::sigmoid(Tensor::scalar(0.0)).item() == 0.5);

  Tensor z = Tensor::from_cvector({1}, {cplx(0.0, -M_PI)});
  cplx e = ops::exp_complex(z).cdata()[0];
  CHECK(std::abs(e - cplx(-1.0, 0.0)) < 1e-15);

  Tensor t = Tensor::from_vector({3}, {-30.0, 0.0, 30.0});
  Tensor s = ops::sigmoid(t);
  CHECK(s.rdata()[0] > 0.0);
  CHECK(s.rdata()[0] < 1e-12);
  CHECK(s.rdata()[2] > 1.0 - 1e-12);
}

TEST_CASE("mul gradient follows the product rule") {
  Tensor a = Tensor::scalar(2.0);
  Tensor b = Tensor::scalar(3.0);
  a.node()->set_requires_grad(true);
  b.node()->set_requires_grad(true);
  Tape tape;
  Tensor y = ops::mul(a, b);
  tape.backward(y);
  CHECK(a.rgrad()[0] == 3.0);
  CHECK(b.rgrad()[0] == 2.0);
}

TEST_CASE("trailing-dimension broadcast") {
  Tensor m = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row = Tensor::from_vector({3}, {10, 20, 30});
  Tensor r = ops::add(m, row);
  CHECK(r.rdata() == std::vector<double>{11, 22, 33, 14, 25, 36});

  Tensor col = Tensor::from_vector({2, 1}, {1, 2});
  Tensor o = ops::mul(col, row);
  CHECK(o.shape() == Shape{2, 3});
  CHECK(o.rdata() == std::vector<double>{10, 20, 30, 20, 40, 60});

  Tensor bad = Tensor::real({4});
  CHECK_THROWS_AS(ops::add(m, bad), DimensionError);
}

TEST_CASE("mixed real/complex arithmetic promotes to complex") {
  Tensor r = Tensor::from_vector({2}, {2.0, -1.0});
  Tensor z = Tensor::from_cvector({2}, {cplx(1.0, 1.0), cplx(0.0, 2.0)});
  Tensor s = ops::add(r, z);
  REQUIRE(s.dtype() == DType::Complex128);
  CHECK(s.cdata()[0] == cplx(3.0, 1.0));
  CHECK(s.cdata()[1] == cplx(-1.0, 2.0));

  Tensor p = ops::mul(r, z);
  CHECK(p.cdata()[0] == cplx(2.0, 2.0));
  CHECK(p.cdata()[1] == cplx(0.0, -2.0));
}

TEST_CASE("layer_norm behavior") {
  Tensor c = Tensor::from_vector({4}, {5, 5, 5, 5});
  Tensor cn = ops::layer_norm(c, 1e-5);
  for (double v : cn.rdata()) CHECK(v == 0.0);

  Tensor pm = Tensor::from_vector({2}, {1, -1});
  Tensor n = ops::layer_norm(pm, 1e-5);
  const double f = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(n.rdata()[0] == doctest::Approx(f).epsilon(1e-12));
  CHECK(n.rdata()[1] == doctest::Approx(-f).epsilon(1e-12));

  Rng rng(3);
  Tensor x = random_real({8}, rng, -10.0, 10.0);
  Tensor y = ops::layer_norm(x, 1e-5);
  double mean = 0.0;
  for (double v : y.rdata()) mean += v;
  mean /= 8.0;
  double var = 0.0;
  for (double v : y.rdata()) var += (v - mean) * (v - mean);
  var /= 8.0;
  CHECK(std::abs(mean) < 1e-12);
  CHECK(std::abs(var - 1.0) < 1e-6);
}

TEST_CASE("cumsum_scan basics") {
  Tensor x = Tensor::from_vector({3}, {1, 2, 3});
  CHECK(ops::cumsum_scan(x).rdata() == std::vector<double>{1, 3, 6});

  Tensor z = Tensor::real({3});
  Tensor zc = ops::cumsum_scan(z);
  for (double v : zc.rdata()) CHECK(v == 0.0);
}

TEST_CASE("cumsum_scan long complex sequence vs sequential oracle") {
  Rng rng(19);
  Tensor x = random_complex({1000}, rng);
  Tensor y = ops::cumsum_scan(x);

  cplx acc(0.0, 0.0);
  double max_mag = 0.0, max_diff = 0.0;
  for (std::size_t i = 0; i < 1000; ++i) {
    acc += x.cdata()[i];
    max_mag = std::max(max_mag, std::abs(acc));
    max_diff = std::max(max_diff, std::abs(acc - y.cdata()[i]));
  }
  CHECK(max_diff <= 1e-12 * max_mag);
}

TEST_CASE("cumsum_scan agrees across worker counts") {
  Rng rng(23);
  Tensor x = random_complex({513, 5}, rng);
  set_worker_count(1);
  Tensor y1 = ops::cumsum_scan(x);
  set_worker_count(4);
  Tensor y4 = ops::cumsum_scan(x);
  set_worker_count(1);

  double max_mag = 0.0, max_diff = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    max_mag = std::max(max_mag, std::abs(y1.cdata()[i]));
    max_diff = std::max(max_diff, std::abs(y1.cdata()[i] - y4.cdata()[i]));
  }
  CHECK(max_diff <= 1e-12 * max_mag);
}

TEST_CASE("cumsum_scan rejects empty time axis") {
  Tensor x = Tensor::real({0, 3});
  CHECK_THROWS_AS(ops::cumsum_scan(x), DimensionError);
}

TEST_CASE("tape refuses a second backward and non-scalar roots") {
  Tensor a = Tensor::scalar(1.5);
  a.node()->set_requires_grad(true);
  Tape tape;
  Tensor y = ops::mul(a, a);
  tape.backward(y);
  CHECK(a.rgrad()[0] == 3.0);
  CHECK_THROWS_AS(tape.backward(y), TapeError);

  Tensor v = Tensor::real({3});
  v.node()->set_requires_grad(true);
  Tape t2;
  Tensor w = ops::add(v, v);
  CHECK_THROWS_AS(t2.backward(w), TapeError);
}

TEST_CASE("gradcheck: matmul/add/sigmoid/tanh chain") {
  Rng rng(101);
  Tensor W = random_real({3, 4}, rng, -1, 1, true);
  Tensor b = random_real({4}, rng, -1, 1, true);
  Tensor x = random_real({2, 3}, rng);
  Tensor proj = random_real({2, 4}, rng);

  auto loss_value = [&]() {
    Tensor h = ops::tanh_op(ops::add(ops::matmul(x, W), b));
    Tensor s = ops::sigmoid(h);
    return ops::sum_all(ops::mul(s, proj)).item();
  };

  {
    Tape tape;
    Tensor h = ops::tanh_op(ops::add(ops::matmul(x, W), b));
    Tensor s = ops::sigmoid(h);
    Tensor loss = ops::sum_all(ops::mul(s, proj));
    tape.backward(loss);
  }
  auto rep = check_grads({{"W", W}, {"b", b}}, loss_value);
  INFO(rep.worst);
  CHECK(rep.ok);
}

TEST_CASE("gradcheck: complex exponential chain") {
  Rng rng(103);
  Tensor a = random_real({3}, rng, 0.05, 0.5, true);
  Tensor o = random_real({2}, rng, -1.0, 1.0, true);
  Tensor wc = random_complex({3, 2}, rng);
  Tensor wr = random_real({3, 2}, rng);
  Tensor wi = random_real({3, 2}, rng);

  auto forward = [&]() {
    Tensor am = ops::add(ops::reshape(a, {3, 1}), Tensor::real({1, 2}));
    Tensor om = ops::add(Tensor::real({3, 1}), ops::reshape(o, {1, 2}));
    Tensor z = ops::exp_complex(
        ops::make_complex(ops::scale(am, -1.0), ops::scale(om, -1.0)));
    Tensor w = ops::mul(z, wc);
    return ops::add(ops::mul(ops::real_part(w), wr),
                    ops::mul(ops::imag_part(w), wi));
  };
  auto loss_value = [&]() { return ops::sum_all(forward()).item(); };

  {
    Tape tape;
    Tensor loss = ops::sum_all(forward());
    tape.backward(loss);
  }
  auto rep = check_grads({{"a", a}, {"o", o}}, loss_value);
  INFO(rep.worst);
  CHECK(rep.ok);
}

TEST_CASE("gradcheck: cumsum_scan real and complex") {
  Rng rng(107);
  Tensor xr = random_real({5, 3}, rng, -1, 1, true);
  Tensor xi = random_real({5, 3}, rng, -1, 1, true);
  Tensor wc = random_complex({5, 3}, rng);
  Tensor wr = random_real({5, 3}, rng);

  auto loss_value = [&]() {
    Tensor zc = ops::cumsum_scan(ops::make_complex(xr, xi));
    Tensor m = ops::mul(zc, wc);
    Tensor re = ops::sum_all(ops::real_part(m));
    Tensor rr = ops::sum_all(ops::mul(ops::cumsum_scan(xr), wr));
    return ops::add(re, rr).item();
  };

  {
    Tape tape;
    Tensor zc = ops::cumsum_scan(ops::make_complex(xr, xi));
    Tensor m = ops::mul(zc, wc);
    Tensor re = ops::sum_all(ops::real_part(m));
    Tensor rr = ops::sum_all(ops::mul(ops::cumsum_scan(xr), wr));
    tape.backward(ops::add(re, rr));
  }
  auto rep = check_grads({{"xr", xr}, {"xi", xi}}, loss_value);
  INFO(rep.worst);
  CHECK(rep.ok);
}

TEST_CASE("gradcheck: layer_norm") {
  Rng rng(109);
  Tensor x = random_real({4, 6}, rng, -5, 5, true);
  Tensor w = random_real({4, 6}, rng);

  auto loss_value = [&]() {
    return ops::sum_all(ops::mul(ops::layer_norm(x, 1e-5), w)).item();
  };
  {
    Tape tape;
    tape.backward(ops::sum_all(ops::mul(ops::layer_norm(x, 1e-5), w)));
  }
  auto rep = check_grads({{"x", x}}, loss_value);
  INFO(rep.worst);
  CHECK(rep.ok);
}

TEST_CASE("gradcheck: reshape/concat/narrow") {
  Rng rng(113);
  Tensor x = random_real({3, 4}, rng, -1, 1, true);
  Tensor y = random_real({2, 4}, rng, -1, 1, true);
  Tensor w = random_real({10}, rng);

  auto forward = [&]() {
    Tensor c = ops::concat(x, y, 0);
    Tensor n = ops::narrow(c, 1, 1, 2);
    return ops::sum_all(ops::mul(ops::reshape(n, {10}), w));
  };
  {
    Tape tape;
    tape.backward(forward());
  }
  auto rep = check_grads({{"x", x}, {"y", y}}, [&]() { return forward().item(); });
  INFO(rep.worst);
  CHECK(rep.ok);
}

TEST_CASE("gradcheck: abs and clamp_max away from kinks") {
  Rng rng(127);
  Tensor x = Tensor::from_vector({4}, {-0.8, -0.3, 0.4, 1.6}, true);
  Tensor w = random_real({4}, rng);
  const double cap = 1.0;

  auto forward = [&]() {
    return ops::sum_all(ops::mul(ops::clamp_max(ops::abs_op(x), cap), w));
  };
  {
    Tape tape;
    tape.backward(forward());
  }
  auto rep = check_grads({{"x", x}}, [&]() { return forward().item(); });
  INFO(rep.worst);
  CHECK(rep.ok);
}

TEST_CASE("masked cross entropy value, gradient, accuracy") {
  Tensor logits = Tensor::from_vector({3, 2}, {2.0, 0.0, 0.0, 1.0, 5.0, -5.0});
  std::vector<std::size_t> targets{0, 1, 1};
  std::vector<std::uint8_t> mask{1, 1, 0};

  // manual: row0 lse = log(e^2 + 1), row1 lse = log(1 + e)
  const double l0 = std::log(std::exp(2.0) + 1.0) - 2.0;
  const double l1 = std::log(1.0 + std::exp(1.0)) - 1.0;
  Tensor loss = ops::masked_cross_entropy(logits, targets, mask);
  CHECK(loss.item() == doctest::Approx((l0 + l1) / 2.0).epsilon(1e-12));

  CHECK(ops::masked_accuracy(logits, targets, mask) == 1.0);
  std::vector<std::uint8_t> all{1, 1, 1};
  CHECK(ops::masked_accuracy(logits, targets, all) ==
        doctest::Approx(2.0 / 3.0));

  std::vector<std::uint8_t> none{0, 0, 0};
  CHECK_THROWS_AS(ops::masked_cross_entropy(logits, targets, none), ConfigError);

  Rng rng(131);
  Tensor lp = random_real({6, 4}, rng, -2, 2, true);
  std::vector<std::size_t> tg{0, 3, 1, 2, 2, 0};
  std::vector<std::uint8_t> mk{1, 0, 1, 1, 0, 1};
  auto loss_value = [&]() {
    return ops::masked_cross_entropy(lp, tg, mk).item();
  };
  {
    Tape tape;
    tape.backward(ops::masked_cross_entropy(lp, tg, mk));
  }
  auto rep = check_grads({{"logits", lp}}, loss_value);
  INFO(rep.worst);
  CHECK(rep.ok);
}

TEST_CASE("sum_all, mean_all, scale") {
  Tensor x = Tensor::from_vector({4}, {1, 2, 3, 4});
  CHECK(ops::sum_all(x).item() == 10.0);
  CHECK(ops::mean_all(x).item() == 2.5);

  Tensor z = Tensor::from_cvector({2}, {cplx(1, 2), cplx(3, -4)});
  Tensor s = ops::scale(z, -2.0);
  CHECK(s.cdata()[0] == cplx(-2, -4));
  CHECK(s.cdata()[1] == cplx(-6, 8));
}

TEST_CASE("all op outputs stay 64-bit") {
  Rng rng(137);
  Tensor a = random_real({2, 3}, rng);
  Tensor z = random_complex({2, 3}, rng);
  CHECK(ops::add(a, a).dtype() == DType::Real64);
  CHECK(ops::mul(a, z).dtype() == DType::Complex128);
  CHECK(sizeof(ops::add(a, a).rdata()[0]) == 8);
  CHECK(sizeof(ops::mul(a, z).cdata()[0]) == 16);
}

TEST_CASE("allocation tracking counts tensor storage") {
  const std::size_t before = AllocStats::current();
  {
    Tensor t = Tensor::real({128});
    CHECK(AllocStats::current() >= before + 128 * sizeof(double));
  }
  CHECK(AllocStats::current() == before);

  AllocStats::reset_peak();
  { Tensor big = Tensor::complex({1024}); }
  CHECK(AllocStats::peak() >= AllocStats::current() + 1024 * sizeof(cplx));
}

TEST_CASE("rng reproducibility and bounds") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.raw() == b.raw());
  }
  Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(c.below(5) < 5);
  }
}

TEST_CASE("stack0 stacks along a new leading axis") {
  Tensor a = Tensor::from_vector({2}, {1.0, 2.0});
  Tensor b = Tensor::from_vector({2}, {3.0, 4.0});
  Tensor c = Tensor::from_vector({2}, {5.0, 6.0});
  Tensor s = ops::stack0({a, b, c});
  CHECK(s.shape() == Shape{3, 2});
  CHECK(s.rdata() == std::vector<double>{1, 2, 3, 4, 5, 6});

  Tensor z = ops::stack0({Tensor::from_cvector({1}, {cplx(1, 2)}),
                          Tensor::from_cvector({1}, {cplx(3, 4)})});
  CHECK(z.dtype() == DType::Complex128);
  CHECK(z.cdata()[1] == cplx(3, 4));

  CHECK_THROWS_AS(ops::stack0({}), DimensionError);
  CHECK_THROWS_AS(ops::stack0({a, Tensor::real({3})}), DimensionError);
}

TEST_CASE("gradcheck: stack0 routes slice gradients to each part") {
  Rng rng(401);
  Tensor a = Tensor::real({2, 2}, true);
  Tensor b = Tensor::real({2, 2}, true);
  Tensor w = Tensor::real({3, 2, 2});
  for (double& v : a.rdata()) v = rng.uniform(-1, 1);
  for (double& v : b.rdata()) v = rng.uniform(-1, 1);
  for (double& v : w.rdata()) v = rng.uniform(-1, 1);
  auto loss = [&]() {
    return ops::sum_all(ops::mul(ops::stack0({a, b, ops::mul(a, b)}), w));
  };
  {
    Tape tape;
    tape.backward(loss());
  }
  auto rep = testsupport::check_grads({{"a", a}, {"b", b}},
                                      [&]() { return loss().item(); });
  INFO(rep.worst);
  CHECK(rep.ok);
}
