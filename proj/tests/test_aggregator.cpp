#include <cmath>
#include <complex>
#include <limits>
#include <vector>

#include "doctest.h"
#include "ffm/aggregator.hpp"
#include "ffm/ops.hpp"
#include "ffm/rng.hpp"
#include "gradcheck.hpp"

using namespace ffm;
using testsupport::check_grads;

namespace {

DecayParams random_params(Rng& rng, std::size_t m, std::size_t c,
                          double alpha_lo = 0.02, double alpha_hi = 0.4) {
  std::vector<double> a(m), w(c);
  for (auto& v : a) v = rng.uniform(alpha_lo, alpha_hi);
  for (auto& v : w) v = rng.uniform(-M_PI, M_PI);
  return DecayParams::create(a, w);
}

Tensor random_xt(Rng& rng, std::size_t T, std::size_t m) {
  Tensor x = Tensor::real({T, m});
  for (double& v : x.rdata()) v = rng.uniform(-1.0, 1.0);
  return x;
}

Tensor random_state(Rng& rng, std::size_t m, std::size_t c) {
  Tensor s = Tensor::complex({m, c});
  for (cplx& v : s.cdata()) v = cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));
  return s;
}

double max_absdiff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double mx = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    mx = std::max(mx, std::abs(a.cdata()[i] - b.cdata()[i]));
  }
  return mx;
}

// reference: p+1 applications of the one-step recurrence
std::vector<Tensor> step_oracle(const DecayParams& p, const Tensor& xt,
                                const RecurrentState& prev) {
  std::vector<Tensor> out;
  RecurrentState cur = prev;
  const std::size_t T = xt.shape()[0], m = xt.shape()[1];
  for (std::size_t t = 0; t < T; ++t) {
    Tensor row = Tensor::real({m});
    for (std::size_t j = 0; j < m; ++j) row.rdata()[j] = xt.rdata()[t * m + j];
    cur = step(p, row, cur);
    out.push_back(cur.S);
  }
  return out;
}

}  // namespace

TEST_CASE("gamma_pow closed-form values") {
  // max_chunk_len 512 keeps the alpha clamp above ln 2
  DecayParams half = DecayParams::create({std::log(2.0)}, {0.0}, 512);
  Tensor ones = gamma_pow(half, 0.0);
  CHECK(ones.cdata()[0] == cplx(1.0, 0.0));
  CHECK(gamma_pow(half, 1.0).cdata()[0].real() == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(gamma_pow(half, 1.0).cdata()[0].imag() == 0.0);

  DecayParams rot = DecayParams::create({0.0}, {M_PI / 2.0});
  cplx g = gamma_pow(rot, 1.0).cdata()[0];
  CHECK(std::abs(g - cplx(0.0, -1.0)) < 1e-15);

  // negative powers invert the decay
  cplx inv = gamma_pow(half, -1.0).cdata()[0];
  CHECK(inv.real() == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("gamma_pow outer-product structure") {
  DecayParams p = DecayParams::create({0.1, 0.2}, {0.3, 0.7, 1.1});
  Tensor g = gamma_pow(p, 2.5);
  REQUIRE(g.shape() == Shape{2, 3});
  for (std::size_t j = 0; j < 2; ++j) {
    const double alpha = j == 0 ? 0.1 : 0.2;
    for (std::size_t k = 0; k < 3; ++k) {
      const double omega = k == 0 ? 0.3 : (k == 1 ? 0.7 : 1.1);
      const cplx want = std::exp(cplx(-2.5 * alpha, -2.5 * omega));
      CHECK(std::abs(g.cdata()[j * 3 + k] - want) < 1e-15);
    }
  }
}

TEST_CASE("gamma_pow overflow guard names alpha and t") {
  DecayParams p = DecayParams::create({5.0}, {0.0});  // clamps to alpha_max
  CHECK(std::abs(p.alpha_max -
                 (std::log(std::numeric_limits<double>::max()) / 1024.0 - 1e-3)) <
        1e-15);
  CHECK_NOTHROW(gamma_pow(p, 1024.0));
  CHECK_THROWS_AS(gamma_pow(p, 1030.0), StabilityError);
  try {
    gamma_pow(p, 1030.0);
  } catch (const StabilityError& e) {
    std::string msg = e.what();
    CHECK(msg.find("alpha") != std::string::npos);
    CHECK(msg.find("1030") != std::string::npos);
  }
}

TEST_CASE("step matches the closed-form recurrence") {
  // zero state: input broadcast across columns
  DecayParams p = DecayParams::create({0.3, 0.1}, {0.5, -0.2, 0.9});
  RecurrentState z = RecurrentState::zeros(2, 3);
  Tensor v = Tensor::from_vector({2}, {1.5, -2.0});
  RecurrentState s1 = step(p, v, z);
  CHECK(s1.step == 1);
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(s1.S.cdata()[j * 3 + k] == cplx(v.rdata()[j], 0.0));
    }
  }

  // pure halving decay
  DecayParams half = DecayParams::create({std::log(2.0)}, {0.0}, 512);
  RecurrentState eight{Tensor::from_cvector({1, 1}, {cplx(8.0, 0.0)}), 0};
  RecurrentState four = step(half, Tensor::from_vector({1}, {0.0}), eight);
  CHECK(four.S.cdata()[0].real() == doctest::Approx(4.0).epsilon(1e-14));

  // e^{-i pi} rotation cancels two unit impulses
  DecayParams pi_rot = DecayParams::create({0.0}, {M_PI});
  RecurrentState s = RecurrentState::zeros(1, 1);
  Tensor one = Tensor::from_vector({1}, {1.0});
  s = step(pi_rot, one, s);
  s = step(pi_rot, one, s);
  CHECK(std::abs(s.S.cdata()[0]) < 1e-14);
  CHECK(s.step == 2);
}

TEST_CASE("step rejects non-finite input") {
  DecayParams p = DecayParams::create({0.1}, {0.0});
  Tensor bad = Tensor::from_vector({1}, {std::nan("")});
  CHECK_THROWS_AS(step(p, bad, RecurrentState::zeros(1, 1)), StabilityError);
}

TEST_CASE("scan with T=1 equals a single step") {
  Rng rng(41);
  DecayParams p = random_params(rng, 3, 2);
  RecurrentState prev{random_state(rng, 3, 2), 7};
  Tensor xt = random_xt(rng, 1, 3);

  ScanResult r = scan(p, xt, prev);
  Tensor row = Tensor::from_vector({3}, {xt.rdata()[0], xt.rdata()[1], xt.rdata()[2]});
  RecurrentState s = step(p, row, prev);
  Tensor got = ops::reshape(r.states, {3, 2});
  CHECK(max_absdiff(got, s.S) < 1e-14);
  CHECK(r.last.step == 8);
}

TEST_CASE("scan of zero input is pure carry decay") {
  Rng rng(43);
  DecayParams p = random_params(rng, 2, 2);
  RecurrentState prev{random_state(rng, 2, 2), 0};
  Tensor xt = Tensor::real({5, 2});

  ScanResult r = scan(p, xt, prev);
  for (std::size_t t = 0; t < 5; ++t) {
    Tensor g = gamma_pow(p, static_cast<double>(t + 1));
    for (std::size_t i = 0; i < 4; ++i) {
      const cplx want = g.cdata()[i] * prev.S.cdata()[i];
      const cplx got = r.states.cdata()[t * 4 + i];
      CHECK(std::abs(got - want) < 1e-12);
    }
  }
}

TEST_CASE("scan matches repeated step on random instances") {
  Rng rng(47);
  for (int rep = 0; rep < 3; ++rep) {
    const std::size_t m = 4, c = 3, T = 64;
    DecayParams p = random_params(rng, m, c);
    RecurrentState prev{random_state(rng, m, c), 0};
    Tensor xt = random_xt(rng, T, m);

    auto oracle = step_oracle(p, xt, prev);
    for (ScanMode mode : {ScanMode::Stabilized, ScanMode::NaiveFactoring}) {
      ScanResult r = scan(p, xt, prev, mode);
      double mx = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        Tensor got = ops::reshape(ops::narrow(r.states, 0, t, 1), {m, c});
        mx = std::max(mx, max_absdiff(got, oracle[t]));
      }
      CHECK(mx <= 1e-8);
    }
  }
}

TEST_CASE("scan enforces the chunk bound") {
  DecayParams p = DecayParams::create({0.1}, {0.2}, 16);
  Tensor xt = Tensor::real({17, 1});
  CHECK_THROWS_AS(scan(p, xt, RecurrentState::zeros(1, 1)), ChunkBoundError);
  CHECK_NOTHROW(chunked_scan(p, xt, RecurrentState::zeros(1, 1), 16));
  CHECK_THROWS_AS(chunked_scan(p, xt, RecurrentState::zeros(1, 1), 17),
                  ConfigError);
  CHECK_THROWS_AS(chunked_scan(p, xt, RecurrentState::zeros(1, 1), 0),
                  ConfigError);
}

TEST_CASE("chunked_scan equals monolithic scan") {
  Rng rng(53);
  const std::size_t m = 3, c = 2, T = 256;
  DecayParams p = random_params(rng, m, c);
  RecurrentState prev{random_state(rng, m, c), 0};
  Tensor xt = random_xt(rng, T, m);

  ScanResult mono = scan(p, xt, prev);
  ScanResult part = chunked_scan(p, xt, prev, 32);
  CHECK(max_absdiff(mono.states, part.states) <= 1e-9);
  CHECK(max_absdiff(mono.last.S, part.last.S) <= 1e-9);
  CHECK(part.last.step == T);

  ScanResult same = chunked_scan(p, xt, prev, T);
  CHECK(max_absdiff(mono.states, same.states) == 0.0);

  ScanResult ones = chunked_scan(p, xt, prev, 1);
  auto oracle = step_oracle(p, xt, prev);
  double mx = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    Tensor got = ops::reshape(ops::narrow(ones.states, 0, t, 1), {m, c});
    mx = std::max(mx, max_absdiff(got, oracle[t]));
  }
  CHECK(mx <= 1e-9);
}

TEST_CASE("shift property: gamma powers compose additively") {
  Rng rng(59);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    DecayParams p = random_params(rng, 2, 2, 0.0, 0.03);
    const double a = rng.uniform(-32.0, 32.0);
    const double b = rng.uniform(-32.0, 32.0);
    Tensor ga = gamma_pow(p, a);
    Tensor gb = gamma_pow(p, b);
    Tensor gab = gamma_pow(p, a + b);
    for (std::size_t k = 0; k < 4; ++k) {
      worst = std::max(worst,
                       std::abs(ga.cdata()[k] * gb.cdata()[k] - gab.cdata()[k]));
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("decay ordering: impulse magnitude strictly decreases") {
  DecayParams p = DecayParams::create({0.05, 0.2, 0.45}, {0.0, 0.0});
  RecurrentState s = RecurrentState::zeros(3, 2);
  s = step(p, Tensor::from_vector({3}, {1.0, 1.0, 1.0}), s);
  Tensor zero = Tensor::real({3});
  std::vector<double> prev_mag(6, 2.0);
  for (int t = 0; t < 50; ++t) {
    s = step(p, zero, s);
    for (std::size_t i = 0; i < 6; ++i) {
      const double mag = std::abs(s.S.cdata()[i]);
      CHECK(mag < prev_mag[i]);
      prev_mag[i] = mag;
    }
  }
}

TEST_CASE("context periodicity: impulse returns after 2*pi/omega steps") {
  const double period = 25.0;
  DecayParams p = DecayParams::create({0.0}, {2.0 * M_PI / period});
  RecurrentState s0 = RecurrentState::zeros(1, 1);
  s0 = step(p, Tensor::from_vector({1}, {1.0}), s0);
  RecurrentState s = s0;
  Tensor zero = Tensor::real({1});
  for (int t = 0; t < 25; ++t) s = step(p, zero, s);
  CHECK(std::abs(s.S.cdata()[0] - s0.S.cdata()[0]) < 1e-9);
}

TEST_CASE("gradcheck: scan path for alpha, omega, inputs") {
  Rng rng(61);
  const std::size_t m = 3, c = 2, T = 16;
  DecayParams p = random_params(rng, m, c, 0.05, 0.5);
  Tensor xt = Tensor::real({T, m}, true);
  for (double& v : xt.rdata()) v = rng.uniform(-1.0, 1.0);
  RecurrentState prev{random_state(rng, m, c), 0};

  Tensor wr = Tensor::complex({T, m, c});
  Tensor wi = Tensor::complex({T, m, c});
  for (cplx& v : wr.cdata()) v = cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));
  for (cplx& v : wi.cdata()) v = cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));

  auto forward = [&]() {
    ScanResult r = scan(p, xt, prev);
    Tensor lr = ops::sum_all(ops::real_part(ops::mul(r.states, wr)));
    Tensor li = ops::sum_all(ops::imag_part(ops::mul(r.states, wi)));
    return ops::add(lr, li);
  };
  {
    Tape tape;
    tape.backward(forward());
  }
  auto rep = check_grads(
      {{"alpha_raw", p.alpha_raw}, {"omega", p.omega}, {"x", xt}},
      [&]() { return forward().item(); });
  INFO(rep.worst);
  CHECK(rep.ok);
}

TEST_CASE("gradcheck: chunked scan across a boundary") {
  Rng rng(67);
  const std::size_t m = 2, c = 2, T = 12;
  DecayParams p = random_params(rng, m, c, 0.05, 0.5);
  Tensor xt = Tensor::real({T, m}, true);
  for (double& v : xt.rdata()) v = rng.uniform(-1.0, 1.0);
  RecurrentState prev = RecurrentState::zeros(m, c);

  Tensor wr = Tensor::complex({T, m, c});
  for (cplx& v : wr.cdata()) v = cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));

  auto forward = [&]() {
    ScanResult r = chunked_scan(p, xt, prev, 5);
    return ops::sum_all(ops::real_part(ops::mul(r.states, wr)));
  };
  {
    Tape tape;
    tape.backward(forward());
  }
  auto rep = check_grads(
      {{"alpha_raw", p.alpha_raw}, {"omega", p.omega}, {"x", xt}},
      [&]() { return forward().item(); });
  INFO(rep.worst);
  CHECK(rep.ok);
}

TEST_CASE("gradcheck: hadamard gamma with per-row frequencies") {
  Rng rng(71);
  const std::size_t m = 2, c = 2, T = 8;
  std::vector<double> a{0.1, 0.3};
  std::vector<double> w{0.4, -0.8, 1.2, 0.2};
  DecayParams p = DecayParams::create_hadamard(a, w, m);
  REQUIRE(p.hadamard());

  Tensor xt = Tensor::real({T, m}, true);
  for (double& v : xt.rdata()) v = rng.uniform(-1.0, 1.0);
  RecurrentState prev = RecurrentState::zeros(m, c);
  Tensor wr = Tensor::complex({T, m, c});
  for (cplx& v : wr.cdata()) v = cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));

  auto forward = [&]() {
    ScanResult r = scan(p, xt, prev);
    return ops::sum_all(ops::real_part(ops::mul(r.states, wr)));
  };
  {
    Tape tape;
    tape.backward(forward());
  }
  auto rep = check_grads(
      {{"alpha_raw", p.alpha_raw}, {"omega", p.omega}, {"x", xt}},
      [&]() { return forward().item(); });
  INFO(rep.worst);
  CHECK(rep.ok);

  // hadamard gamma must differ across rows when frequencies do
  ScanResult r = scan(p, xt, prev);
  CHECK(std::abs(r.states.cdata()[0] - r.states.cdata()[2]) > 0.0);
}

TEST_CASE("naive factoring overflows at long T where stabilized survives") {
  const double amax = DecayParams::compute_alpha_max(1024);
  DecayParams p = DecayParams::create({amax}, {0.0});
  Tensor xt = Tensor::full({1024, 1}, 4.0);
  RecurrentState prev = RecurrentState::zeros(1, 1);

  ScanResult ok = scan(p, xt, prev, ScanMode::Stabilized);
  CHECK(ok.states.all_finite());
  CHECK_THROWS_AS(scan(p, xt, prev, ScanMode::NaiveFactoring), StabilityError);
}

TEST_CASE("batched scan equals independent per-sequence scans") {
  Rng rng(73);
  const std::size_t m = 3, c = 2, T = 20, B = 3;
  DecayParams p = random_params(rng, m, c);
  Tensor u = Tensor::real({T, B, m});
  for (double& v : u.rdata()) v = rng.uniform(-1.0, 1.0);
  Tensor carry = Tensor::complex({B, m, c});
  for (cplx& v : carry.cdata()) v = cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));

  BatchedScanResult rb = scan_batched(p, u, carry);
  for (std::size_t b = 0; b < B; ++b) {
    Tensor xt = Tensor::real({T, m});
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < m; ++j) {
        xt.rdata()[t * m + j] = u.rdata()[(t * B + b) * m + j];
      }
    }
    Tensor s0 = Tensor::complex({m, c});
    for (std::size_t i = 0; i < m * c; ++i) {
      s0.cdata()[i] = carry.cdata()[b * m * c + i];
    }
    ScanResult rs = scan(p, xt, RecurrentState{s0, 0});
    double mx = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < m * c; ++i) {
        mx = std::max(mx, std::abs(rs.states.cdata()[t * m * c + i] -
                                   rb.states.cdata()[(t * B + b) * m * c + i]));
      }
    }
    CHECK(mx <= 1e-12);
  }
}

TEST_CASE("scan agrees across worker counts") {
  Rng rng(79);
  const std::size_t m = 4, c = 3, T = 128;
  DecayParams p = random_params(rng, m, c);
  Tensor xt = random_xt(rng, T, m);
  RecurrentState prev{random_state(rng, m, c), 0};

  set_worker_count(1);
  ScanResult r1 = scan(p, xt, prev);
  set_worker_count(3);
  ScanResult r3 = scan(p, xt, prev);
  set_worker_count(1);
  CHECK(max_absdiff(r1.states, r3.states) <= 1e-12);
}
