#pragma once

#include "csdnet/autodiff.hpp"
#include "csdnet/tensor.hpp"

#include <cstddef>
#include <span>

namespace csdnet::ops {

/// Added to L2 denominators so degenerate vectors stay finite.
inline constexpr double kNormEpsilon = 1e-12;

// Elementwise and reductions. Binary ops require identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var exp(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var sum(Var a);
Var mean(Var a);
/// Mean of equally shaped scalars.
Var average(std::span<const Var> terms);

/// out(x,y) = sum_i k(i) * X(i,x,y). X is C x H x W, k has length C.
Var conv2d_1x1(Var features, Var kernel);

/// Cross-correlation with zero padding 1. weights are Cout x Cin x 3 x 3.
Var conv2d_3x3(Var input, Var weights, std::size_t stride);

/// X(c,.,.) + b(c).
Var add_channel_bias(Var input, Var bias);

/// X(c,x,y) * gate(x,y), broadcast over channels.
Var channel_gate(Var input, Var gate);

/// Per-channel mean of a C x H x W tensor.
Var global_avg_pool(Var input);

/// W e + b with W of shape K x D.
Var linear(Var weight, Var bias, Var input);

// Vector ops (rank 1), all max-subtracted.
Var softmax(Var logits);
Var log_softmax(Var logits);
Var l2_normalize(Var v);

/// Rows stacked into an N x D matrix.
Var stack(std::span<const Var> rows);

// Non-differentiable helpers on plain tensors.
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);

/// Bilinear resampling with half-pixel centers (align_corners = false).
/// Accepts H x W or C x H x W input.
Tensor bilinear_resize(const Tensor& map, std::size_t out_h, std::size_t out_w);

/// Deliberate backward defects, used to prove the gradient suite catches them.
enum class Fault { none, sigmoid_backward_sign };
void inject_fault(Fault fault) noexcept;
Fault active_fault() noexcept;

} // namespace csdnet::ops
