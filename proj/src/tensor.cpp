#include "ffm/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "ffm/alloc_stats.hpp"

namespace ffm {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {
std::atomic<int> g_workers{1};
std::atomic<bool> g_sim_f32{false};
}  // namespace

void set_worker_count(int n) {
  if (n < 1) throw ConfigError("worker count must be >= 1");
  g_workers.store(n);
}
int worker_count() { return g_workers.load(); }

void set_simulated_single_precision(bool on) { g_sim_f32.store(on); }
bool simulated_single_precision() { return g_sim_f32.load(); }

void apply_precision_mode(TensorData& t) {
  if (!g_sim_f32.load()) return;
  if (t.dtype() == DType::Real64) {
    for (double& v : t.rdata()) v = static_cast<double>(static_cast<float>(v));
  } else {
    for (cplx& v : t.cdata()) {
      v = cplx(static_cast<double>(static_cast<float>(v.real())),
               static_cast<double>(static_cast<float>(v.imag())));
    }
  }
}

TensorData::TensorData(Shape shape, DType dtype, bool requires_grad)
    : shape_(std::move(shape)), dtype_(dtype), requires_grad_(requires_grad) {
  size_ = numel(shape_);
  if (dtype_ == DType::Real64) {
    real_.assign(size_, 0.0);
    book(size_ * sizeof(double));
  } else {
    cplx_.assign(size_, cplx(0.0, 0.0));
    book(size_ * sizeof(cplx));
  }
}

TensorData::~TensorData() { AllocStats::sub(booked_bytes_); }

void TensorData::book(std::size_t bytes) {
  booked_bytes_ += bytes;
  AllocStats::add(bytes);
}

std::vector<double>& TensorData::rgrad() {
  if (dtype_ != DType::Real64) throw DimensionError("rgrad on complex tensor");
  if (!grad_allocated_) {
    real_grad_.assign(size_, 0.0);
    book(size_ * sizeof(double));
    grad_allocated_ = true;
  }
  return real_grad_;
}

std::vector<cplx>& TensorData::cgrad() {
  if (dtype_ != DType::Complex128) throw DimensionError("cgrad on real tensor");
  if (!grad_allocated_) {
    cplx_grad_.assign(size_, cplx(0.0, 0.0));
    book(size_ * sizeof(cplx));
    grad_allocated_ = true;
  }
  return cplx_grad_;
}

void TensorData::drop_grad() {
  if (!grad_allocated_) return;
  if (dtype_ == DType::Real64) {
    std::fill(real_grad_.begin(), real_grad_.end(), 0.0);
  } else {
    std::fill(cplx_grad_.begin(), cplx_grad_.end(), cplx(0.0, 0.0));
  }
}

Tensor Tensor::real(Shape shape, bool requires_grad) {
  return Tensor(std::make_shared<TensorData>(std::move(shape), DType::Real64,
                                             requires_grad));
}

Tensor Tensor::complex(Shape shape, bool requires_grad) {
  return Tensor(std::make_shared<TensorData>(std::move(shape),
                                             DType::Complex128, requires_grad));
}

Tensor Tensor::from_vector(Shape shape, const std::vector<double>& values,
                           bool requires_grad) {
  Tensor t = real(std::move(shape), requires_grad);
  if (values.size() != t.size()) {
    throw DimensionError("from_vector: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(t.shape()));
  }
  t.rdata() = values;
  return t;
}

Tensor Tensor::from_cvector(Shape shape, const std::vector<cplx>& values,
                            bool requires_grad) {
  Tensor t = complex(std::move(shape), requires_grad);
  if (values.size() != t.size()) {
    throw DimensionError("from_cvector: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(t.shape()));
  }
  t.cdata() = values;
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t = real({1});
  t.rdata()[0] = v;
  return t;
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t = real(std::move(shape));
  std::fill(t.rdata().begin(), t.rdata().end(), v);
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of size " + std::to_string(size()));
  if (dtype() != DType::Real64) throw DimensionError("item() on complex tensor");
  return rdata()[0];
}

Tensor Tensor::clone_detached() const {
  Tensor out;
  if (dtype() == DType::Real64) {
    out = Tensor::real(shape());
    out.rdata() = rdata();
  } else {
    out = Tensor::complex(shape());
    out.cdata() = cdata();
  }
  return out;
}

bool Tensor::all_finite() const {
  if (dtype() == DType::Real64) {
    for (double v : rdata()) {
      if (!std::isfinite(v)) return false;
    }
  } else {
    for (const cplx& v : cdata()) {
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    }
  }
  return true;
}

namespace {
thread_local Tape* t_active_tape = nullptr;
}

Tape::Tape() : prev_(t_active_tape) { t_active_tape = this; }

Tape::~Tape() { t_active_tape = prev_; }

Tape* Tape::active() { return t_active_tape; }

void Tape::record(std::function<void()> fn) {
  nodes_.push_back(std::move(fn));
}

void Tape::backward(const Tensor& root) {
  if (consumed_) {
    throw TapeError("backward called twice on the same tape");
  }
  if (!root.defined() || root.size() != 1 || root.dtype() != DType::Real64) {
    throw TapeError("backward root must be a real scalar");
  }
  consumed_ = true;
  root.rgrad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

}  // namespace ffm
