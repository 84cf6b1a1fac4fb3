#pragma once

#include <span>
#include <vector>

#include "deal/tensor/tensor.hpp"

// Differentiable operators. Every function records a backward rule on the
// result when grad mode is on and an input requires a gradient.
namespace deal::ops {

// Elementwise binary ops. Shapes must have equal rank; each extent of `b`
// must equal the matching extent of `a` or be 1 (broadcast). `a` fixes the
// result shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
// Natural log of max(a, floor).
Tensor log(const Tensor& a, double floor = 1e-300);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
// Value clamp; gradient is zero where the clamp is active.
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Sums a list of equally shaped tensors.
Tensor add_n(std::span<const Tensor> terms);

Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);  // rank-2 only
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]x[n,k]^T

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
// Rows of a rank-2 tensor, in the given order (repeats allowed).
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
// Elementwise maximum across equally shaped tensors; the gradient flows to
// the first maximal term.
Tensor max_reduce(std::span<const Tensor> terms);

Tensor softmax_rows(const Tensor& a);
// Zero-mean unit-variance rows (no affine part).
Tensor normalize_rows(const Tensor& a, double eps = 1e-5);

// NCHW input, OIHW kernel.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);
Tensor upsample_nearest2x(const Tensor& input);

// Bilinear sample of a C×H×W (or 1×C×H×W) feature at continuous grid
// coordinates; returns a length-C vector of shape [C].
Tensor bilinear_sample(const Tensor& feature, double x, double y);
// One row per point: [k, C].
Tensor bilinear_sample_points(const Tensor& feature, std::span<const double> xs, std::span<const double> ys);

}  // namespace deal::ops
