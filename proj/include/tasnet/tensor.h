// tasnet/tensor.h

// Copyright 2026  The TasNet-CPP Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef TASNET_TENSOR_H_
#define TASNET_TENSOR_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace tasnet {

// Dense tensor with reverse-mode automatic differentiation.
//
// Each tensor is a handle on a node of a dynamically built computation
// graph. Recording an operation stores the operand handles and a closure
// that pushes the node's adjoint into its operands. backward() sweeps the
// nodes reachable from a scalar loss in reverse creation order, so every
// operand is finalized before it is consumed and fan-out contributions sum.
//
// T is float (default precision) or double (gradient-checking mode).
template <typename T>
class TensorT {
 public:
  struct Impl {
    std::vector<int64_t> shape;
    std::vector<T> values;
    std::vector<T> grad;  // empty until touched by backward()
    bool requires_grad = false;
    int64_t node_id = 0;
    std::vector<std::shared_ptr<Impl>> inputs;
    std::function<void(Impl&)> backprop;  // nullptr for leaves
  };

  TensorT() = default;

  static TensorT zeros(std::vector<int64_t> shape, bool requires_grad = false);
  static TensorT full(std::vector<int64_t> shape, T value);
  static TensorT from_data(std::vector<int64_t> shape, std::vector<T> values,
                           bool requires_grad = false);
  static TensorT scalar(T value, bool requires_grad = false);
  // Centered uniform on [-scale, scale).
  static TensorT uniform(std::vector<int64_t> shape, T scale,
                         std::mt19937_64& rng, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int64_t>& shape() const { return impl_->shape; }
  int64_t dim(int i) const { return impl_->shape[i]; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(impl_->values.size()); }
  int64_t node_id() const { return impl_->node_id; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  std::span<T> values() { return impl_->values; }
  std::span<const T> values() const { return impl_->values; }
  // Empty span when no gradient has been accumulated yet.
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad();

  T item() const;  // scalar tensors only

  std::shared_ptr<Impl> impl() const { return impl_; }
  explicit TensorT(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<Impl> impl_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// While a guard is alive on a thread, ops on that thread record nothing;
// forward values are still computed.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

struct ConvSpec {
  int stride = 1;
  int dilation = 1;
  int padding = 0;
  int groups = 1;
};

int64_t conv1d_out_len(int64_t in_len, int64_t kernel, const ConvSpec& spec);
int64_t conv1d_transposed_out_len(int64_t in_len, int64_t kernel,
                                  const ConvSpec& spec);

// Cross-correlation (no kernel flip). input [C_in x T],
// kernels [C_out x C_in/groups x P], bias [C_out] -> [C_out x T_out].
template <typename T>
TensorT<T> conv1d(const TensorT<T>& input, const TensorT<T>& kernels,
                  const std::optional<TensorT<T>>& bias, const ConvSpec& spec);

// Exact adjoint of conv1d with shared kernels. input [C_in x K],
// kernels [C_in x C_out/groups x P] -> [C_out x T].
template <typename T>
TensorT<T> conv1d_transposed(const TensorT<T>& input, const TensorT<T>& kernels,
                             const std::optional<TensorT<T>>& bias,
                             const ConvSpec& spec);

// Per-channel parametric ReLU over dim 0 of a 1-D or 2-D tensor.
template <typename T>
TensorT<T> prelu(const TensorT<T>& input, const TensorT<T>& slopes);

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& input);

// Elementwise; shapes must match except that either side may be a scalar
// tensor (the only broadcast supported).
template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
TensorT<T> scalar_mul(const TensorT<T>& a, T c);
template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T c);

// d|x|/dx is sign(x), 0 at x = 0.
template <typename T>
TensorT<T> abs(const TensorT<T>& a);

// Elementwise power; base elements must be non-negative.
template <typename T>
TensorT<T> pow(const TensorT<T>& a, T exponent);

// Natural log; elements must be strictly positive.
template <typename T>
TensorT<T> log(const TensorT<T>& a);

template <typename T>
TensorT<T> sum(const TensorT<T>& a);
template <typename T>
TensorT<T> mean(const TensorT<T>& a);
template <typename T>
TensorT<T> l2_norm_sq(const TensorT<T>& a);
template <typename T>
TensorT<T> dot(const TensorT<T>& a, const TensorT<T>& b);

// Normalizes over channel and time jointly; gain/bias are per channel.
// input [N x K], gain [N], bias [N].
template <typename T>
TensorT<T> global_layer_norm(const TensorT<T>& input, const TensorT<T>& gain,
                             const TensorT<T>& bias, T eps);

// Contiguous sub-range along dim (0 or 1) of a 1-D or 2-D tensor.
template <typename T>
TensorT<T> narrow(const TensorT<T>& a, int dim, int64_t start, int64_t len);

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, std::vector<int64_t> new_shape);

// Appends n zeros along the last dimension.
template <typename T>
TensorT<T> pad_end(const TensorT<T>& a, int64_t n);

// sqrt(re^2 + im^2); the gradient denominator is floored to keep the
// modulus differentiable at zero.
template <typename T>
TensorT<T> complex_abs(const TensorT<T>& re, const TensorT<T>& im);

// Populates grads of every tracked tensor reachable from a scalar loss.
template <typename T>
void backward(const TensorT<T>& loss);

std::string shape_str(const std::vector<int64_t>& shape);

}  // namespace tasnet

#endif  // TASNET_TENSOR_H_
