#ifndef PSAL_OPS_HPP
#define PSAL_OPS_HPP

#include <cstddef>

#include "psal/rng.hpp"
#include "psal/tensor.hpp"

namespace psal {

enum class Mode { Train, Eval };

enum class Activation { Relu, Tanh, Sigmoid };

// Layer ops. All take NCHW tensors and record gradients when any input does.

/// Cross-correlation; kernel is [F, C, kh, kw], bias is [F].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// Transposed convolution, the adjoint of conv2d with the same kernel and
/// geometry. Kernel is [C_in, F, kh, kw] (the conv2d layout read backwards),
/// bias is [F]. Output spatial size is (H-1)*stride - 2*padding + kh.
Tensor deconv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                std::size_t padding);

/// Non-overlapping max pooling; ties route the gradient to the first
/// maximal element in row-major order.
Tensor maxpool2d(const Tensor& input, std::size_t window);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

/// Per-channel batch normalization. In train mode the batch statistics are
/// used and, when `state` is non-null, folded into the running statistics as
/// running = momentum * running + (1 - momentum) * batch, where the batch
/// variance folded in is the unbiased one. Eval mode reads the
/// running statistics (state must be non-null).
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, Mode mode,
                   BatchNormState* state, double momentum = kBatchNormMomentum, double eps = kBatchNormEps);

/// Inverted dropout. Identity in eval mode.
Tensor dropout(const Tensor& input, double rate, Mode mode, Rng& rng);

Tensor activation(const Tensor& input, Activation kind);
inline Tensor relu(const Tensor& x) { return activation(x, Activation::Relu); }
inline Tensor tanh(const Tensor& x) { return activation(x, Activation::Tanh); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::Sigmoid); }

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t end);

// Elementwise and reduction helpers used by the losses.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor abs(const Tensor& a);
Tensor log(const Tensor& a);
/// Clamp to [lo, hi]; gradient is zero where the clamp is active.
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Mean over C, H, W for each batch item: [N, C, H, W] -> [N].
Tensor mean_per_sample(const Tensor& a);

double dot(const Tensor& a, const Tensor& b);

}  // namespace psal

#endif  // PSAL_OPS_HPP
