#pragma once

#include <utility>

#include "survnet/tensor.hpp"

namespace survnet {

/// Variance floor used by instance statistics and AdaIN.
inline constexpr double kInstanceNormEpsilon = 1e-5;

enum class Conv3dKernel { Naive, Fast };

/// Process-wide conv3d kernel selector, Fast by default. The naive kernel is
/// the bounds-checked reference; the fast kernel runs over a zero-padded
/// copy with contiguous inner rows. Both must agree within 1e-12.
Conv3dKernel& conv3d_kernel();

/// 3D cross-correlation. x: [N, Cin, D, H, W], weight: [Cout, Cin, k, k, k]
/// (k odd), bias: [Cout]. Output extent: (D + 2*padding - k) / stride + 1.
TensorPtr conv3d(const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias,
                 int stride = 1, int padding = 0);

/// Affine map. x: [N, Fin], weight: [Fout, Fin], bias: [Fout] -> [N, Fout].
TensorPtr linear(const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias);

/// Elementwise max(v, 0). Subgradient at 0 is 0.
TensorPtr relu(const TensorPtr& x);

/// Elementwise v > 0 ? v : slope * v.
TensorPtr leaky_relu(const TensorPtr& x, double negative_slope);

/// Non-overlapping max pooling over window^3 blocks; spatial extents must be
/// divisible by the window. Ties route the gradient to the first occurrence
/// in scan order.
TensorPtr maxpool3d(const TensorPtr& x, int window = 2);

/// Mean over the spatial dimensions: [N, C, D, H, W] -> [N, C].
TensorPtr global_avg_pool(const TensorPtr& x);

/// [N, ...] -> [N, F] reshape.
TensorPtr flatten(const TensorPtr& x);

/// Concatenation along `axis`; all other extents must match.
TensorPtr concat(const TensorPtr& a, const TensorPtr& b, int axis);

/// Contiguous sub-range [start, start + length) along `axis`.
TensorPtr slice(const TensorPtr& x, int axis, int start, int length);

/// Per-(sample, channel) spatial mean and standard deviation of a
/// [N, C, D, H, W] tensor. The deviation uses the population variance with
/// an epsilon floor: sigma = sqrt(var + 1e-5). Both outputs are [N, C] and
/// differentiable.
std::pair<TensorPtr, TensorPtr> instance_stats(const TensorPtr& x);

/// Mean absolute error between same-shaped tensors; scalar output. The
/// subgradient of |d| at d = 0 is taken as 0.
TensorPtr mae(const TensorPtr& pred, const TensorPtr& target);

} // namespace survnet
