#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ffm/errors.hpp"

namespace ffm {

using cplx = std::complex<double>;
using Shape = std::vector<std::size_t>;

enum class DType { Real64, Complex128 };

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Runtime knobs. Worker count feeds the blocked cumulative-sum kernels;
// simulated single precision rounds every op result through float32 storage
// (used by the stability self-tests, never in normal operation).
void set_worker_count(int n);
int worker_count();
void set_simulated_single_precision(bool on);
bool simulated_single_precision();

// Storage node. All values are 64-bit (real64 / complex128). The grad buffer
// shares shape and dtype with the data and is allocated on first use.
//
// Gradient convention for complex values: the loss is always real, and the
// grad of z = x + iy is stored as dL/dx + i*dL/dy.
class TensorData {
public:
  TensorData(Shape shape, DType dtype, bool requires_grad);
  ~TensorData();

  TensorData(const TensorData&) = delete;
  TensorData& operator=(const TensorData&) = delete;

  const Shape& shape() const { return shape_; }
  DType dtype() const { return dtype_; }
  std::size_t size() const { return size_; }
  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool b) { requires_grad_ = b; }

  std::vector<double>& rdata() { return real_; }
  const std::vector<double>& rdata() const { return real_; }
  std::vector<cplx>& cdata() { return cplx_; }
  const std::vector<cplx>& cdata() const { return cplx_; }

  // Zero-filled on first call.
  std::vector<double>& rgrad();
  std::vector<cplx>& cgrad();
  bool has_grad() const { return grad_allocated_; }
  void drop_grad();

private:
  Shape shape_;
  DType dtype_;
  std::size_t size_ = 0;
  bool requires_grad_ = false;
  bool grad_allocated_ = false;
  std::vector<double> real_;
  std::vector<cplx> cplx_;
  std::vector<double> real_grad_;
  std::vector<cplx> cplx_grad_;
  std::size_t booked_bytes_ = 0;
  void book(std::size_t bytes);
};

// Value-semantic handle to shared storage.
class Tensor {
public:
  Tensor() = default;

  static Tensor real(Shape shape, bool requires_grad = false);
  static Tensor complex(Shape shape, bool requires_grad = false);
  static Tensor from_vector(Shape shape, const std::vector<double>& values,
                            bool requires_grad = false);
  static Tensor from_cvector(Shape shape, const std::vector<cplx>& values,
                             bool requires_grad = false);
  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);

  bool defined() const { return p_ != nullptr; }
  const Shape& shape() const { return p_->shape(); }
  DType dtype() const { return p_->dtype(); }
  std::size_t size() const { return p_->size(); }
  std::size_t rank() const { return p_->shape().size(); }
  bool requires_grad() const { return p_->requires_grad(); }

  std::vector<double>& rdata() const { return p_->rdata(); }
  std::vector<cplx>& cdata() const { return p_->cdata(); }
  std::vector<double>& rgrad() const { return p_->rgrad(); }
  std::vector<cplx>& cgrad() const { return p_->cgrad(); }
  bool has_grad() const { return p_->has_grad(); }
  void zero_grad() const { if (p_) p_->drop_grad(); }

  double item() const;

  // Detached copy sharing nothing with this tensor; never requires grad.
  Tensor clone_detached() const;

  bool all_finite() const;

  TensorData* node() const { return p_.get(); }
  const std::shared_ptr<TensorData>& ptr() const { return p_; }

private:
  explicit Tensor(std::shared_ptr<TensorData> p) : p_(std::move(p)) {}
  std::shared_ptr<TensorData> p_;
};

// Reverse-mode tape. Constructing a Tape pushes it as the active recording
// scope for the current thread; destruction pops it. Operations record their
// backward rules in execution order, so reverse iteration is a valid reverse
// topological order.
class Tape {
public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> fn);
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and replays recorded rules in reverse.
  // root must be a real scalar. A second call without re-recording throws.
  void backward(const Tensor& root);

private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
  Tape* prev_ = nullptr;
};

// Rounds stored values through float32 when simulated single precision is
// enabled; otherwise a no-op. Called on every op result.
void apply_precision_mode(TensorData& t);

}  // namespace ffm
