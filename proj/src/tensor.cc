// src/tensor.cc

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

#include "tasnet/tensor.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace tasnet {

namespace {

std::atomic<int64_t> g_next_node_id{1};
thread_local bool g_grad_enabled = true;

int64_t next_node_id() {
  return g_next_node_id.fetch_add(1, std::memory_order_relaxed);
}

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

template <typename T>
void ensure_grad(typename TensorT<T>::Impl& n) {
  if (n.grad.empty()) n.grad.assign(n.values.size(), T(0));
}

// Builds a graph node. The backprop closure is dropped when grad mode is
// off or no input is tracked.
template <typename T>
TensorT<T> make_node(std::vector<int64_t> shape, std::vector<T> values,
                     std::initializer_list<TensorT<T>> inputs,
                     std::function<void(typename TensorT<T>::Impl&)> backprop) {
  auto impl = std::make_shared<typename TensorT<T>::Impl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->node_id = next_node_id();
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) track = true;
    }
  }
  if (track) {
    impl->requires_grad = true;
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) impl->inputs.push_back(in.impl());
    }
    impl->backprop = std::move(backprop);
  }
  return TensorT<T>(impl);
}

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b,
                      const char* op) {
  if (a.shape() != b.shape()) {
    fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
         " vs " + shape_str(b.shape()));
  }
}

// ---------------------------------------------------------------------------
// Convolution kernels. All three accumulate (+=) into their target so the
// same routines serve forward passes and gradient passes. Index convention:
// a tap p of a kernel at output step t touches input sample t*stride +
// p*dilation - padding. Each target element is written by exactly one OpenMP
// thread with a fixed summation order, so results do not depend on the
// thread count.
// ---------------------------------------------------------------------------

// out[co, t] += sum_{ci in group(co), p} a[ci, t*s + p*d - pad] * w[co, ci', p]
template <typename T>
void correlate_acc(const T* a, int64_t ca, int64_t ta, const T* w, int64_t co_n,
                   int64_t p_n, int s, int d, int pad, int g, T* out,
                   int64_t to) {
  const int64_t co_per_g = co_n / g;
  const int64_t ci_per_g = ca / g;
#pragma omp parallel for schedule(static) \
    if (co_n * to * ci_per_g * p_n > (1 << 14))
  for (int64_t co = 0; co < co_n; ++co) {
    const int64_t gi = co / co_per_g;
    T* out_row = out + co * to;
    for (int64_t cil = 0; cil < ci_per_g; ++cil) {
      const T* a_row = a + (gi * ci_per_g + cil) * ta;
      const T* w_row = w + (co * ci_per_g + cil) * p_n;
      for (int64_t p = 0; p < p_n; ++p) {
        const T wv = w_row[p];
        const int64_t off = p * d - pad;
        int64_t t0 = off < 0 ? (-off + s - 1) / s : 0;
        int64_t t1 = ta - 1 - off < 0 ? -1 : (ta - 1 - off) / s;
        t1 = std::min<int64_t>(t1, to - 1);
        const T* ap = a_row + t0 * s + off;
        for (int64_t t = t0; t <= t1; ++t, ap += s) out_row[t] += wv * *ap;
      }
    }
  }
}

// out[cb, t*s + p*d - pad] += a[co, t] * w[co, cb', p]
template <typename T>
void scatter_acc(const T* a, int64_t co_n, int64_t ta, const T* w, int64_t cb_n,
                 int64_t p_n, int s, int d, int pad, int g, T* out,
                 int64_t tb) {
  const int64_t co_per_g = co_n / g;
  const int64_t cb_per_g = cb_n / g;
#pragma omp parallel for schedule(static) \
    if (cb_n * ta * co_per_g * p_n > (1 << 14))
  for (int64_t cb = 0; cb < cb_n; ++cb) {
    const int64_t gi = cb / cb_per_g;
    const int64_t cbl = cb % cb_per_g;
    T* out_row = out + cb * tb;
    for (int64_t col = 0; col < co_per_g; ++col) {
      const int64_t co = gi * co_per_g + col;
      const T* a_row = a + co * ta;
      const T* w_row = w + (co * cb_per_g + cbl) * p_n;
      for (int64_t p = 0; p < p_n; ++p) {
        const T wv = w_row[p];
        const int64_t off = p * d - pad;
        int64_t t0 = off < 0 ? (-off + s - 1) / s : 0;
        int64_t t1 = tb - 1 - off < 0 ? -1 : (tb - 1 - off) / s;
        t1 = std::min<int64_t>(t1, ta - 1);
        T* op = out_row + t0 * s + off;
        for (int64_t t = t0; t <= t1; ++t, op += s) *op += wv * a_row[t];
      }
    }
  }
}

// w[co, cb', p] += sum_t a[co, t] * b[cb, t*s + p*d - pad]
template <typename T>
void kernel_acc(const T* a, int64_t co_n, int64_t ta, const T* b, int64_t cb_n,
                int64_t tb, int s, int d, int pad, int g, T* w, int64_t p_n) {
  const int64_t co_per_g = co_n / g;
  const int64_t cb_per_g = cb_n / g;
#pragma omp parallel for schedule(static) \
    if (co_n * ta * cb_per_g * p_n > (1 << 14))
  for (int64_t co = 0; co < co_n; ++co) {
    const int64_t gi = co / co_per_g;
    const T* a_row = a + co * ta;
    for (int64_t cbl = 0; cbl < cb_per_g; ++cbl) {
      const T* b_row = b + (gi * cb_per_g + cbl) * tb;
      T* w_row = w + (co * cb_per_g + cbl) * p_n;
      for (int64_t p = 0; p < p_n; ++p) {
        const int64_t off = p * d - pad;
        int64_t t0 = off < 0 ? (-off + s - 1) / s : 0;
        int64_t t1 = tb - 1 - off < 0 ? -1 : (tb - 1 - off) / s;
        t1 = std::min<int64_t>(t1, ta - 1);
        T acc = 0;
        const T* bp = b_row + t0 * s + off;
        for (int64_t t = t0; t <= t1; ++t, bp += s) acc += a_row[t] * *bp;
        w_row[p] += acc;
      }
    }
  }
}

template <typename T>
void check_conv_args(const TensorT<T>& input, const TensorT<T>& kernels,
                     const std::optional<TensorT<T>>& bias,
                     const ConvSpec& spec, const char* op) {
  if (input.ndim() != 2) {
    fail(std::string(op) + ": input must be 2-D [channels x time], got " +
         shape_str(input.shape()));
  }
  if (kernels.ndim() != 3) {
    fail(std::string(op) + ": kernels must be 3-D, got " +
         shape_str(kernels.shape()));
  }
  if (spec.stride < 1 || spec.dilation < 1 || spec.padding < 0 ||
      spec.groups < 1) {
    fail(std::string(op) + ": invalid stride/dilation/padding/groups");
  }
  if (input.dim(0) % spec.groups != 0) {
    fail(std::string(op) + ": input channels (" + std::to_string(input.dim(0)) +
         ") not divisible by groups (" + std::to_string(spec.groups) + ")");
  }
  if (bias && bias->ndim() != 1) {
    fail(std::string(op) + ": bias must be 1-D");
  }
}

}  // namespace

std::string shape_str(const std::vector<int64_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += " x ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// ---------------------------------------------------------------------------
// TensorT
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> TensorT<T>::zeros(std::vector<int64_t> shape, bool requires_grad) {
  auto impl = std::make_shared<Impl>();
  impl->values.assign(shape_numel(shape), T(0));
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  impl->node_id = next_node_id();
  return TensorT(impl);
}

template <typename T>
TensorT<T> TensorT<T>::full(std::vector<int64_t> shape, T value) {
  auto t = zeros(std::move(shape), false);
  std::fill(t.impl_->values.begin(), t.impl_->values.end(), value);
  return t;
}

template <typename T>
TensorT<T> TensorT<T>::from_data(std::vector<int64_t> shape,
                                 std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    fail("from_data: " + std::to_string(values.size()) +
         " values do not fill shape " + shape_str(shape));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  impl->node_id = next_node_id();
  return TensorT(impl);
}

template <typename T>
TensorT<T> TensorT<T>::scalar(T value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

template <typename T>
TensorT<T> TensorT<T>::uniform(std::vector<int64_t> shape, T scale,
                               std::mt19937_64& rng, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  std::uniform_real_distribution<T> dist(-scale, scale);
  for (T& v : t.impl_->values) v = dist(rng);
  return t;
}

template <typename T>
void TensorT<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
T TensorT<T>::item() const {
  if (numel() != 1) {
    fail("item: tensor has " + std::to_string(numel()) + " elements");
  }
  return impl_->values[0];
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

int64_t conv1d_out_len(int64_t in_len, int64_t kernel, const ConvSpec& spec) {
  return (in_len + 2 * spec.padding - spec.dilation * (kernel - 1) - 1) /
             spec.stride +
         1;
}

int64_t conv1d_transposed_out_len(int64_t in_len, int64_t kernel,
                                  const ConvSpec& spec) {
  return (in_len - 1) * spec.stride - 2 * spec.padding +
         spec.dilation * (kernel - 1) + 1;
}

template <typename T>
TensorT<T> conv1d(const TensorT<T>& input, const TensorT<T>& kernels,
                  const std::optional<TensorT<T>>& bias, const ConvSpec& spec) {
  check_conv_args(input, kernels, bias, spec, "conv1d");
  const int64_t ci = input.dim(0), ti = input.dim(1);
  const int64_t co = kernels.dim(0), p = kernels.dim(2);
  if (kernels.dim(1) != ci / spec.groups) {
    fail("conv1d: kernel input-channel extent " +
         std::to_string(kernels.dim(1)) + " != input channels/groups " +
         std::to_string(ci / spec.groups));
  }
  if (co % spec.groups != 0) {
    fail("conv1d: output channels (" + std::to_string(co) +
         ") not divisible by groups (" + std::to_string(spec.groups) + ")");
  }
  if (bias && bias->dim(0) != co) {
    fail("conv1d: bias length " + std::to_string(bias->dim(0)) +
         " != output channels " + std::to_string(co));
  }
  if (ti + 2 * spec.padding < spec.dilation * (p - 1) + 1) {
    fail("conv1d: kernel span " + std::to_string(spec.dilation * (p - 1) + 1) +
         " exceeds padded input length " +
         std::to_string(ti + 2 * spec.padding));
  }
  const int64_t to = conv1d_out_len(ti, p, spec);

  std::vector<T> out(co * to, T(0));
  correlate_acc(input.values().data(), ci, ti, kernels.values().data(), co, p,
                spec.stride, spec.dilation, spec.padding, spec.groups,
                out.data(), to);
  if (bias) {
    const T* b = bias->values().data();
    for (int64_t c = 0; c < co; ++c)
      for (int64_t t = 0; t < to; ++t) out[c * to + t] += b[c];
  }

  auto in_impl = input.impl();
  auto k_impl = kernels.impl();
  auto b_impl = bias ? bias->impl() : nullptr;
  auto bp = [in_impl, k_impl, b_impl, ci, ti, co, p, to,
             spec](typename TensorT<T>::Impl& node) {
    const T* g = node.grad.data();
    if (in_impl->requires_grad) {
      ensure_grad<T>(*in_impl);
      scatter_acc(g, co, to, k_impl->values.data(), ci, p, spec.stride,
                  spec.dilation, spec.padding, spec.groups,
                  in_impl->grad.data(), ti);
    }
    if (k_impl->requires_grad) {
      ensure_grad<T>(*k_impl);
      kernel_acc(g, co, to, in_impl->values.data(), ci, ti, spec.stride,
                 spec.dilation, spec.padding, spec.groups, k_impl->grad.data(),
                 p);
    }
    if (b_impl && b_impl->requires_grad) {
      ensure_grad<T>(*b_impl);
      for (int64_t c = 0; c < co; ++c) {
        T acc = 0;
        for (int64_t t = 0; t < to; ++t) acc += g[c * to + t];
        b_impl->grad[c] += acc;
      }
    }
  };
  if (bias) {
    return make_node<T>({co, to}, std::move(out), {input, kernels, *bias},
                        std::move(bp));
  }
  return make_node<T>({co, to}, std::move(out), {input, kernels},
                      std::move(bp));
}

template <typename T>
TensorT<T> conv1d_transposed(const TensorT<T>& input, const TensorT<T>& kernels,
                             const std::optional<TensorT<T>>& bias,
                             const ConvSpec& spec) {
  check_conv_args(input, kernels, bias, spec, "conv1d_transposed");
  const int64_t ci = input.dim(0), k = input.dim(1);
  const int64_t p = kernels.dim(2);
  const int64_t co = kernels.dim(1) * spec.groups;
  if (kernels.dim(0) != ci) {
    fail("conv1d_transposed: kernel channel extent " +
         std::to_string(kernels.dim(0)) + " != input channels " +
         std::to_string(ci));
  }
  if (bias && bias->dim(0) != co) {
    fail("conv1d_transposed: bias length " + std::to_string(bias->dim(0)) +
         " != output channels " + std::to_string(co));
  }
  const int64_t t_out = conv1d_transposed_out_len(k, p, spec);
  if (t_out < 1) {
    fail("conv1d_transposed: output length " + std::to_string(t_out) +
         " < 1 (padding too large)");
  }

  std::vector<T> out(co * t_out, T(0));
  scatter_acc(input.values().data(), ci, k, kernels.values().data(), co, p,
              spec.stride, spec.dilation, spec.padding, spec.groups, out.data(),
              t_out);
  if (bias) {
    const T* b = bias->values().data();
    for (int64_t c = 0; c < co; ++c)
      for (int64_t t = 0; t < t_out; ++t) out[c * t_out + t] += b[c];
  }

  auto in_impl = input.impl();
  auto k_impl = kernels.impl();
  auto b_impl = bias ? bias->impl() : nullptr;
  auto bp = [in_impl, k_impl, b_impl, ci, k, co, p, t_out,
             spec](typename TensorT<T>::Impl& node) {
    const T* g = node.grad.data();
    if (in_impl->requires_grad) {
      ensure_grad<T>(*in_impl);
      correlate_acc(g, co, t_out, k_impl->values.data(), ci, p, spec.stride,
                    spec.dilation, spec.padding, spec.groups,
                    in_impl->grad.data(), k);
    }
    if (k_impl->requires_grad) {
      ensure_grad<T>(*k_impl);
      kernel_acc(in_impl->values.data(), ci, k, g, co, t_out, spec.stride,
                 spec.dilation, spec.padding, spec.groups, k_impl->grad.data(),
                 p);
    }
    if (b_impl && b_impl->requires_grad) {
      ensure_grad<T>(*b_impl);
      for (int64_t c = 0; c < co; ++c) {
        T acc = 0;
        for (int64_t t = 0; t < t_out; ++t) acc += g[c * t_out + t];
        b_impl->grad[c] += acc;
      }
    }
  };
  if (bias) {
    return make_node<T>({co, t_out}, std::move(out), {input, kernels, *bias},
                        std::move(bp));
  }
  return make_node<T>({co, t_out}, std::move(out), {input, kernels},
                      std::move(bp));
}

// ---------------------------------------------------------------------------
// Activations and elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> prelu(const TensorT<T>& input, const TensorT<T>& slopes) {
  if (input.ndim() < 1 || input.ndim() > 2) {
    fail("prelu: input must be 1-D or 2-D, got " + shape_str(input.shape()));
  }
  const int64_t c = input.dim(0);
  const int64_t k = input.numel() / c;
  if (slopes.numel() != c) {
    fail("prelu: slope count " + std::to_string(slopes.numel()) +
         " != channel extent " + std::to_string(c));
  }
  std::vector<T> out(input.numel());
  const T* x = input.values().data();
  const T* a = slopes.values().data();
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t t = 0; t < k; ++t) {
      const T v = x[ch * k + t];
      out[ch * k + t] = v >= T(0) ? v : a[ch] * v;
    }
  }
  auto in_impl = input.impl();
  auto s_impl = slopes.impl();
  auto bp = [in_impl, s_impl, c, k](typename TensorT<T>::Impl& node) {
    const T* g = node.grad.data();
    const T* x = in_impl->values.data();
    const T* a = s_impl->values.data();
    if (in_impl->requires_grad) {
      ensure_grad<T>(*in_impl);
      T* gx = in_impl->grad.data();
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t t = 0; t < k; ++t) {
          const int64_t i = ch * k + t;
          gx[i] += g[i] * (x[i] >= T(0) ? T(1) : a[ch]);
        }
    }
    if (s_impl->requires_grad) {
      ensure_grad<T>(*s_impl);
      T* ga = s_impl->grad.data();
      for (int64_t ch = 0; ch < c; ++ch) {
        T acc = 0;
        for (int64_t t = 0; t < k; ++t) {
          const int64_t i = ch * k + t;
          if (x[i] < T(0)) acc += g[i] * x[i];
        }
        ga[ch] += acc;
      }
    }
  };
  return make_node<T>(input.shape(), std::move(out), {input, slopes},
                      std::move(bp));
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& input) {
  std::vector<T> out(input.numel());
  const T* x = input.values().data();
  for (int64_t i = 0; i < input.numel(); ++i)
    out[i] = T(1) / (T(1) + std::exp(-x[i]));
  auto in_impl = input.impl();
  auto out_vals = out;  // sigmoid output reused in the adjoint
  auto bp = [in_impl, out_vals](typename TensorT<T>::Impl& node) {
    if (!in_impl->requires_grad) return;
    ensure_grad<T>(*in_impl);
    const T* g = node.grad.data();
    T* gx = in_impl->grad.data();
    for (size_t i = 0; i < out_vals.size(); ++i) {
      const T s = out_vals[i];
      gx[i] += g[i] * s * (T(1) - s);
    }
  };
  return make_node<T>(input.shape(), std::move(out), {input}, std::move(bp));
}

namespace {

// Shared skeleton for add/sub/mul with scalar broadcast on either side.
template <typename T, typename FwdFn, typename BwdA, typename BwdB>
TensorT<T> binary_op(const TensorT<T>& a, const TensorT<T>& b, const char* name,
                     FwdFn fwd, BwdA bwd_a, BwdB bwd_b) {
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!a_scalar && !b_scalar) check_same_shape(a, b, name);
  const TensorT<T>& big = a_scalar ? b : a;
  const int64_t n = big.numel();
  std::vector<T> out(n);
  const T* av = a.values().data();
  const T* bv = b.values().data();
  for (int64_t i = 0; i < n; ++i)
    out[i] = fwd(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
  auto ia = a.impl();
  auto ib = b.impl();
  auto bp = [ia, ib, a_scalar, b_scalar, n, bwd_a,
             bwd_b](typename TensorT<T>::Impl& node) {
    const T* g = node.grad.data();
    const T* av = ia->values.data();
    const T* bv = ib->values.data();
    if (ia->requires_grad) {
      ensure_grad<T>(*ia);
      T* ga = ia->grad.data();
      for (int64_t i = 0; i < n; ++i)
        ga[a_scalar ? 0 : i] +=
            bwd_a(g[i], av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
    }
    if (ib->requires_grad) {
      ensure_grad<T>(*ib);
      T* gb = ib->grad.data();
      for (int64_t i = 0; i < n; ++i)
        gb[b_scalar ? 0 : i] +=
            bwd_b(g[i], av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
    }
  };
  return make_node<T>(big.shape(), std::move(out), {a, b}, std::move(bp));
}

}  // namespace

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      a, b, "add", [](T x, T y) { return x + y; },
      [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      a, b, "sub", [](T x, T y) { return x - y; },
      [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      a, b, "mul", [](T x, T y) { return x * y; },
      [](T g, T, T y) { return g * y; }, [](T g, T x, T) { return g * x; });
}

template <typename T>
TensorT<T> scalar_mul(const TensorT<T>& a, T c) {
  std::vector<T> out(a.numel());
  const T* x = a.values().data();
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = c * x[i];
  auto ia = a.impl();
  auto bp = [ia, c](typename TensorT<T>::Impl& node) {
    if (!ia->requires_grad) return;
    ensure_grad<T>(*ia);
    for (size_t i = 0; i < node.grad.size(); ++i)
      ia->grad[i] += c * node.grad[i];
  };
  return make_node<T>(a.shape(), std::move(out), {a}, std::move(bp));
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
  std::vector<T> out(a.numel());
  const T* x = a.values().data();
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = x[i] + c;
  auto ia = a.impl();
  auto bp = [ia](typename TensorT<T>::Impl& node) {
    if (!ia->requires_grad) return;
    ensure_grad<T>(*ia);
    for (size_t i = 0; i < node.grad.size(); ++i) ia->grad[i] += node.grad[i];
  };
  return make_node<T>(a.shape(), std::move(out), {a}, std::move(bp));
}

template <typename T>
TensorT<T> abs(const TensorT<T>& a) {
  std::vector<T> out(a.numel());
  const T* x = a.values().data();
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = std::abs(x[i]);
  auto ia = a.impl();
  auto bp = [ia](typename TensorT<T>::Impl& node) {
    if (!ia->requires_grad) return;
    ensure_grad<T>(*ia);
    const T* x = ia->values.data();
    for (size_t i = 0; i < node.grad.size(); ++i) {
      const T s = x[i] > T(0) ? T(1) : (x[i] < T(0) ? T(-1) : T(0));
      ia->grad[i] += node.grad[i] * s;
    }
  };
  return make_node<T>(a.shape(), std::move(out), {a}, std::move(bp));
}

template <typename T>
TensorT<T> pow(const TensorT<T>& a, T exponent) {
  const T* x = a.values().data();
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (x[i] < T(0)) {
      fail("pow: negative base " + std::to_string(x[i]) + " at flat index " +
           std::to_string(i));
    }
  }
  std::vector<T> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = std::pow(x[i], exponent);
  auto ia = a.impl();
  auto bp = [ia, exponent](typename TensorT<T>::Impl& node) {
    if (!ia->requires_grad) return;
    ensure_grad<T>(*ia);
    const T* x = ia->values.data();
    for (size_t i = 0; i < node.grad.size(); ++i) {
      // derivative taken as 0 at a zero base
      if (x[i] == T(0)) continue;
      ia->grad[i] += node.grad[i] * exponent * std::pow(x[i], exponent - T(1));
    }
  };
  return make_node<T>(a.shape(), std::move(out), {a}, std::move(bp));
}

template <typename T>
TensorT<T> log(const TensorT<T>& a) {
  const T* x = a.values().data();
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (!(x[i] > T(0))) {
      fail("log: non-positive argument " + std::to_string(x[i]) +
           " at flat index " + std::to_string(i));
    }
  }
  std::vector<T> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = std::log(x[i]);
  auto ia = a.impl();
  auto bp = [ia](typename TensorT<T>::Impl& node) {
    if (!ia->requires_grad) return;
    ensure_grad<T>(*ia);
    const T* x = ia->values.data();
    for (size_t i = 0; i < node.grad.size(); ++i)
      ia->grad[i] += node.grad[i] / x[i];
  };
  return make_node<T>(a.shape(), std::move(out), {a}, std::move(bp));
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
  T acc = 0;
  for (T v : a.values()) acc += v;
  auto ia = a.impl();
  auto bp = [ia](typename TensorT<T>::Impl& node) {
    if (!ia->requires_grad) return;
    ensure_grad<T>(*ia);
    const T g = node.grad[0];
    for (T& gv : ia->grad) gv += g;
  };
  return make_node<T>({1}, {acc}, {a}, std::move(bp));
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
  const T n = static_cast<T>(a.numel());
  T acc = 0;
  for (T v : a.values()) acc += v;
  auto ia = a.impl();
  auto bp = [ia, n](typename TensorT<T>::Impl& node) {
    if (!ia->requires_grad) return;
    ensure_grad<T>(*ia);
    const T g = node.grad[0] / n;
    for (T& gv : ia->grad) gv += g;
  };
  return make_node<T>({1}, {acc / n}, {a}, std::move(bp));
}

template <typename T>
TensorT<T> l2_norm_sq(const TensorT<T>& a) {
  T acc = 0;
  for (T v : a.values()) acc += v * v;
  auto ia = a.impl();
  auto bp = [ia](typename TensorT<T>::Impl& node) {
    if (!ia->requires_grad) return;
    ensure_grad<T>(*ia);
    const T g = node.grad[0];
    const T* x = ia->values.data();
    for (size_t i = 0; i < ia->grad.size(); ++i)
      ia->grad[i] += T(2) * g * x[i];
  };
  return make_node<T>({1}, {acc}, {a}, std::move(bp));
}

template <typename T>
TensorT<T> dot(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape(a, b, "dot");
  T acc = 0;
  const T* av = a.values().data();
  const T* bv = b.values().data();
  for (int64_t i = 0; i < a.numel(); ++i) acc += av[i] * bv[i];
  auto ia = a.impl();
  auto ib = b.impl();
  auto bp = [ia, ib](typename TensorT<T>::Impl& node) {
    const T g = node.grad[0];
    if (ia->requires_grad) {
      ensure_grad<T>(*ia);
      for (size_t i = 0; i < ia->grad.size(); ++i)
        ia->grad[i] += g * ib->values[i];
    }
    if (ib->requires_grad) {
      ensure_grad<T>(*ib);
      for (size_t i = 0; i < ib->grad.size(); ++i)
        ib->grad[i] += g * ia->values[i];
    }
  };
  return make_node<T>({1}, {acc}, {a, b}, std::move(bp));
}

// ---------------------------------------------------------------------------
// Normalization, shaping, modulus
// ---------------------------------------------------------------------------

namespace {

// out[c, k] = x[c, k] * gain[c] + bias[c]
template <typename T>
TensorT<T> row_affine(const TensorT<T>& x, const TensorT<T>& gain,
                      const TensorT<T>& bias) {
  const int64_t c = x.dim(0), k = x.dim(1);
  std::vector<T> out(x.numel());
  const T* xv = x.values().data();
  const T* gv = gain.values().data();
  const T* bv = bias.values().data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t t = 0; t < k; ++t)
      out[ch * k + t] = xv[ch * k + t] * gv[ch] + bv[ch];
  auto ix = x.impl();
  auto ig = gain.impl();
  auto ib = bias.impl();
  auto bp = [ix, ig, ib, c, k](typename TensorT<T>::Impl& node) {
    const T* g = node.grad.data();
    if (ix->requires_grad) {
      ensure_grad<T>(*ix);
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t t = 0; t < k; ++t)
          ix->grad[ch * k + t] += g[ch * k + t] * ig->values[ch];
    }
    if (ig->requires_grad) {
      ensure_grad<T>(*ig);
      for (int64_t ch = 0; ch < c; ++ch) {
        T acc = 0;
        for (int64_t t = 0; t < k; ++t)
          acc += g[ch * k + t] * ix->values[ch * k + t];
        ig->grad[ch] += acc;
      }
    }
    if (ib->requires_grad) {
      ensure_grad<T>(*ib);
      for (int64_t ch = 0; ch < c; ++ch) {
        T acc = 0;
        for (int64_t t = 0; t < k; ++t) acc += g[ch * k + t];
        ib->grad[ch] += acc;
      }
    }
  };
  return make_node<T>(x.shape(), std::move(out), {x, gain, bias},
                      std::move(bp));
}

}  // namespace

template <typename T>
TensorT<T> global_layer_norm(const TensorT<T>& input, const TensorT<T>& gain,
                             const TensorT<T>& bias, T eps) {
  if (input.ndim() != 2) {
    fail("global_layer_norm: input must be 2-D, got " +
         shape_str(input.shape()));
  }
  if (!(eps > T(0))) fail("global_layer_norm: eps must be > 0");
  if (gain.numel() != input.dim(0) || bias.numel() != input.dim(0)) {
    fail("global_layer_norm: gain/bias length " +
         std::to_string(gain.numel()) + "/" + std::to_string(bias.numel()) +
         " != channel extent " + std::to_string(input.dim(0)));
  }
  auto mu = mean(input);
  auto centered = sub(input, mu);
  auto var = mean(mul(centered, centered));
  auto rstd = pow(add_scalar(var, eps), T(-0.5));
  return row_affine(mul(centered, rstd), gain, bias);
}

template <typename T>
TensorT<T> narrow(const TensorT<T>& a, int dim, int64_t start, int64_t len) {
  if (a.ndim() < 1 || a.ndim() > 2 || dim < 0 || dim >= a.ndim()) {
    fail("narrow: dim " + std::to_string(dim) + " invalid for shape " +
         shape_str(a.shape()));
  }
  if (start < 0 || len < 1 || start + len > a.dim(dim)) {
    fail("narrow: range [" + std::to_string(start) + ", " +
         std::to_string(start + len) + ") outside extent " +
         std::to_string(a.dim(dim)));
  }
  const int64_t rows = a.ndim() == 2 ? a.dim(0) : 1;
  const int64_t cols = a.ndim() == 2 ? a.dim(1) : a.dim(0);
  const int64_t r0 = dim == 0 && a.ndim() == 2 ? start : 0;
  const int64_t r1 = dim == 0 && a.ndim() == 2 ? start + len : rows;
  const int64_t c0 = (a.ndim() == 1 || dim == 1) ? start : 0;
  const int64_t c1 = (a.ndim() == 1 || dim == 1) ? start + len : cols;
  std::vector<int64_t> out_shape = a.shape();
  out_shape[dim] = len;
  std::vector<T> out;
  out.reserve((r1 - r0) * (c1 - c0));
  const T* x = a.values().data();
  for (int64_t r = r0; r < r1; ++r)
    for (int64_t c = c0; c < c1; ++c) out.push_back(x[r * cols + c]);
  auto ia = a.impl();
  auto bp = [ia, r0, r1, c0, c1, cols](typename TensorT<T>::Impl& node) {
    if (!ia->requires_grad) return;
    ensure_grad<T>(*ia);
    const T* g = node.grad.data();
    int64_t i = 0;
    for (int64_t r = r0; r < r1; ++r)
      for (int64_t c = c0; c < c1; ++c) ia->grad[r * cols + c] += g[i++];
  };
  return make_node<T>(std::move(out_shape), std::move(out), {a},
                      std::move(bp));
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, std::vector<int64_t> new_shape) {
  if (shape_numel(new_shape) != a.numel()) {
    fail("reshape: " + shape_str(a.shape()) + " has " +
         std::to_string(a.numel()) + " elements, target " +
         shape_str(new_shape) + " wants " +
         std::to_string(shape_numel(new_shape)));
  }
  std::vector<T> out(a.values().begin(), a.values().end());
  auto ia = a.impl();
  auto bp = [ia](typename TensorT<T>::Impl& node) {
    if (!ia->requires_grad) return;
    ensure_grad<T>(*ia);
    for (size_t i = 0; i < node.grad.size(); ++i) ia->grad[i] += node.grad[i];
  };
  return make_node<T>(std::move(new_shape), std::move(out), {a},
                      std::move(bp));
}

template <typename T>
TensorT<T> pad_end(const TensorT<T>& a, int64_t n) {
  if (n < 0) fail("pad_end: negative pad " + std::to_string(n));
  const int64_t rows = a.ndim() == 2 ? a.dim(0) : 1;
  const int64_t cols = a.ndim() == 2 ? a.dim(1) : a.dim(0);
  std::vector<int64_t> out_shape = a.shape();
  out_shape.back() += n;
  const int64_t new_cols = cols + n;
  std::vector<T> out(rows * new_cols, T(0));
  const T* x = a.values().data();
  for (int64_t r = 0; r < rows; ++r)
    std::copy(x + r * cols, x + (r + 1) * cols, out.begin() + r * new_cols);
  auto ia = a.impl();
  auto bp = [ia, rows, cols, new_cols](typename TensorT<T>::Impl& node) {
    if (!ia->requires_grad) return;
    ensure_grad<T>(*ia);
    const T* g = node.grad.data();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c)
        ia->grad[r * cols + c] += g[r * new_cols + c];
  };
  return make_node<T>(std::move(out_shape), std::move(out), {a},
                      std::move(bp));
}

template <typename T>
TensorT<T> complex_abs(const TensorT<T>& re, const TensorT<T>& im) {
  check_same_shape(re, im, "complex_abs");
  std::vector<T> out(re.numel());
  const T* rv = re.values().data();
  const T* iv = im.values().data();
  for (int64_t i = 0; i < re.numel(); ++i)
    out[i] = std::sqrt(rv[i] * rv[i] + iv[i] * iv[i]);
  auto ire = re.impl();
  auto iim = im.impl();
  auto mags = out;
  auto bp = [ire, iim, mags](typename TensorT<T>::Impl& node) {
    constexpr T kFloor = T(1e-8);  // keeps the modulus differentiable at 0
    const T* g = node.grad.data();
    if (ire->requires_grad) {
      ensure_grad<T>(*ire);
      for (size_t i = 0; i < mags.size(); ++i)
        ire->grad[i] += g[i] * ire->values[i] / std::max(mags[i], kFloor);
    }
    if (iim->requires_grad) {
      ensure_grad<T>(*iim);
      for (size_t i = 0; i < mags.size(); ++i)
        iim->grad[i] += g[i] * iim->values[i] / std::max(mags[i], kFloor);
    }
  };
  return make_node<T>(re.shape(), std::move(out), {re, im}, std::move(bp));
}

// ---------------------------------------------------------------------------
// Backward sweep
// ---------------------------------------------------------------------------

template <typename T>
void backward(const TensorT<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    fail("backward: loss must be a scalar tensor");
  }
  using Impl = typename TensorT<T>::Impl;
  if (!loss.requires_grad()) {
    fail("backward: loss is not connected to any tracked tensor");
  }

  std::vector<Impl*> order;
  std::unordered_set<Impl*> seen;
  std::vector<Impl*> stack{loss.impl().get()};
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    Impl* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  // Reverse creation order is a topological order: operands always precede
  // the operations that consume them.
  std::sort(order.begin(), order.end(),
            [](const Impl* a, const Impl* b) { return a->node_id > b->node_id; });

  ensure_grad<T>(*loss.impl());
  loss.impl()->grad[0] += T(1);
  for (Impl* n : order) {
    if (!n->backprop) continue;
    ensure_grad<T>(*n);
    n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

#define TASNET_INSTANTIATE(T)                                                 \
  template class TensorT<T>;                                                  \
  template TensorT<T> conv1d<T>(const TensorT<T>&, const TensorT<T>&,         \
                                const std::optional<TensorT<T>>&,             \
                                const ConvSpec&);                             \
  template TensorT<T> conv1d_transposed<T>(const TensorT<T>&,                 \
                                           const TensorT<T>&,                 \
                                           const std::optional<TensorT<T>>&,  \
                                           const ConvSpec&);                  \
  template TensorT<T> prelu<T>(const TensorT<T>&, const TensorT<T>&);         \
  template TensorT<T> sigmoid<T>(const TensorT<T>&);                          \
  template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);           \
  template TensorT<T> sub<T>(const TensorT<T>&, const TensorT<T>&);           \
  template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);           \
  template TensorT<T> scalar_mul<T>(const TensorT<T>&, T);                    \
  template TensorT<T> add_scalar<T>(const TensorT<T>&, T);                    \
  template TensorT<T> abs<T>(const TensorT<T>&);                              \
  template TensorT<T> pow<T>(const TensorT<T>&, T);                           \
  template TensorT<T> log<T>(const TensorT<T>&);                              \
  template TensorT<T> sum<T>(const TensorT<T>&);                              \
  template TensorT<T> mean<T>(const TensorT<T>&);                             \
  template TensorT<T> l2_norm_sq<T>(const TensorT<T>&);                       \
  template TensorT<T> dot<T>(const TensorT<T>&, const TensorT<T>&);           \
  template TensorT<T> global_layer_norm<T>(const TensorT<T>&,                 \
                                           const TensorT<T>&,                 \
                                           const TensorT<T>&, T);             \
  template TensorT<T> narrow<T>(const TensorT<T>&, int, int64_t, int64_t);    \
  template TensorT<T> reshape<T>(const TensorT<T>&, std::vector<int64_t>);    \
  template TensorT<T> pad_end<T>(const TensorT<T>&, int64_t);                 \
  template TensorT<T> complex_abs<T>(const TensorT<T>&, const TensorT<T>&);   \
  template void backward<T>(const TensorT<T>&);

TASNET_INSTANTIATE(float)
TASNET_INSTANTIATE(double)

#undef TASNET_INSTANTIATE

}  // namespace tasnet
