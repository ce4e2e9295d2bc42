#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "udarc/rng.hpp"

namespace udarc {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // same length as data when tracked, else empty
  bool requires_grad = false;
};

// Shared handle to a dense 64-bit tensor. Values are treated as immutable
// once an operation has produced them; only grad accumulates afterwards.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return impl_->data.size(); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& values() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool on);
  double* grad();
  const double* grad() const;
  std::vector<double>& grad_values() { return impl_->grad; }
  void zero_grad();

  // Value of a one-element tensor.
  double item() const;
  double at(std::initializer_list<int> idx) const;

  // Deep copy; grads are not copied.
  Tensor copy() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Records one backward closure per executed operation, in execution order.
// backward() replays the closures in strict reverse order exactly once per
// call; gradients accumulate additively, so callers zero them between steps.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(const char* op, std::function<void()> backward);
  void backward(const Tensor& loss);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
  Tape* prev_ = nullptr;
};

enum class GeluKind { Erf, Tanh };

// --- differentiable operations -------------------------------------------
// Each op validates shapes, computes its value, and records a node on the
// current tape when one is active and an input is tracked.

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
// a [m,k] times b-transposed where b is [n,k]; result [m,n].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// x [r,c] plus row vector b [c].
Tensor add_bias(const Tensor& x, const Tensor& b);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps);
Tensor gelu(const Tensor& x, GeluKind kind = GeluKind::Erf);
// Mean over rows of -log softmax(logits)[target].
Tensor cross_entropy_logits(const Tensor& logits,
                            const std::vector<int>& targets);
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
Tensor slice_cols(const Tensor& x, int start, int len);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, Shape shape);
Tensor sum(const Tensor& x);
// Inverted dropout; p == 0 is the identity. Mask order follows the rng stream.
Tensor dropout(const Tensor& x, double p, Rng& rng);

double gelu_scalar(double x, GeluKind kind);

}  // namespace udarc
