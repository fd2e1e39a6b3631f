#ifndef FACEDET_TENSOR_HPP
#define FACEDET_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "facedet/rng.hpp"

namespace facedet {

using Scalar = double;
using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major tensor. Copies are aliasing handles (shared storage), so a
// parameter handed to an op and held by the optimizer is the same buffer.
// The grad buffer exists iff requires_grad and always matches data's shape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<Scalar> data, bool requires_grad = false);
  static Tensor uniform(Shape shape, Scalar lo, Scalar hi, Rng& rng, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return impl_->data.size(); }
  bool requires_grad() const { return impl_ && impl_->requires_grad; }

  Scalar* data() { return impl_->data.data(); }
  const Scalar* data() const { return impl_->data.data(); }
  Scalar* grad() { return impl_->grad.data(); }
  const Scalar* grad() const { return impl_->grad.data(); }
  std::vector<Scalar>& values() { return impl_->data; }
  const std::vector<Scalar>& values() const { return impl_->data; }
  const std::vector<Scalar>& grad_values() const { return impl_->grad; }

  Scalar item() const;  // numel()==1 only
  void zero_grad();
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  bool all_finite() const;

  // Deep copy with fresh storage (grad not copied).
  Tensor clone(bool requires_grad = false) const;

 private:
  struct Impl {
    Shape shape;
    std::vector<Scalar> data;
    std::vector<Scalar> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Records one backward rule per forward op, in topological order. Replaying
// in reverse accumulates gradients into every requires_grad tensor reachable
// from the loss; a tensor used twice receives both contributions.
//
// A non-recording tape runs the same forward code but keeps no nodes and
// marks no outputs as differentiable (inference mode).
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  // Extension point for ops defined outside this module (loss kernels).
  void push_node(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }
  Tensor make_output(Shape shape, bool inputs_need_grad) const {
    return Tensor::zeros(std::move(shape), recording_ && inputs_need_grad);
  }

  // x: [C,H,W] or [N,C,H,W]; w: [C_out,C_in,k,k]; b: [C_out].
  Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
  // x: [C_in,H,W] or [N,C_in,H,W]; w: [C_in,C_out,k,k]; b: [C_out].
  // Output spatial size (H-1)*stride - 2*pad + k.
  Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
  // Ties route gradient to the lowest flat index.
  Tensor maxpool2d(const Tensor& x, int k, int stride);

  // Binary ops require exact shape match (no broadcasting).
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor relu(const Tensor& x);
  Tensor sigmoid(const Tensor& x);

  Tensor sum(const Tensor& x);                 // -> shape {1}
  Tensor scale(const Tensor& x, Scalar c);

  // loss must be a scalar produced on this tape.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> nodes_;
  bool recording_;
};

Scalar stable_sigmoid(Scalar z);
// log(1 + exp(x)) without overflow.
Scalar softplus(Scalar x);

// SGD with momentum; weight decay enters as an L2 gradient term:
//   v <- momentum*v + grad + wd*param;  param <- param - lr*v
struct OptimizerState {
  Scalar learning_rate = 0.01;
  Scalar momentum = 0.9;
  Scalar weight_decay = 1e-4;
  std::vector<std::vector<Scalar>> velocity;  // lazily sized to match params

  void step(std::vector<Tensor>& params);
};

// Max over coordinates of |analytic - central difference| /
// max(1e-8, |analytic| + |central difference|). `forward` must rebuild the
// scalar loss from the current contents of `inputs` on the given tape.
Scalar finite_diff_max_rel_error(const std::function<Tensor(Tape&)>& forward,
                                 std::vector<Tensor> inputs, Scalar eps = 1e-5);

}  // namespace facedet

#endif  // FACEDET_TENSOR_HPP
