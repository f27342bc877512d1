// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations over hsd::Tensor. Forward values follow the
// standard definitions; backward passes accumulate exact analytic gradients
// onto every input that requires them. Recording happens only while a
// Tape::Scope is active. There is deliberately no max-pooling op.

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "hsd/tensor.hpp"

namespace hsd {
namespace ops {

/// (m,k) x (k,n) -> (m,n).
Tensor matmul(const Tensor& a, const Tensor& b);

/// x:(B,in) w:(out,in) b:(out) -> (B,out). Fused affine map.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// x:(B,C,H,W) w:(O,C,k,k), stride 1, `padding` zero rows/cols on each side.
Tensor conv2d(const Tensor& x, const Tensor& w, int padding);

/// Adds a 1-D bias along `axis` of x (broadcast over the other axes).
Tensor bias_add(const Tensor& x, const Tensor& bias, int axis);

/// Non-overlapping k x k mean pooling; spatial dims must divide k.
Tensor avgpool2d(const Tensor& x, int k);

Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp_min(const Tensor& x, double floor);  // grad passes where x > floor

Tensor softmax(const Tensor& x, int axis);
Tensor mean(const Tensor& x, int axis);  // removes `axis`
Tensor sum(const Tensor& x, int axis);   // removes `axis`
Tensor sum_all(const Tensor& x);         // rank-0 result

Tensor reshape(const Tensor& x, std::vector<std::int64_t> shape);

/// x:(B,C) -> (B,) picking x[b, labels[b]].
Tensor gather_labels(const Tensor& x, const std::vector<int>& labels);

using CustomForward = std::function<Tensor(std::span<const Tensor>)>;
/// Receives (upstream grad, saved inputs, forward output); returns one grad
/// tensor per input (undefined Tensor to skip an input).
using CustomBackward =
    std::function<std::vector<Tensor>(const Tensor&, std::span<const Tensor>, const Tensor&)>;

/// The surrogate-gradient hook: forward uses `forward` exactly, backward
/// uses `backward` exactly; the chain rule never differentiates `forward`.
Tensor custom_gradient(std::vector<Tensor> inputs, const CustomForward& forward,
                       CustomBackward backward);

}  // namespace ops
}  // namespace hsd
