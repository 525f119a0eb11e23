#pragma once

#include "mcnet/tensor.hpp"

namespace mcnet {

/// Two interchangeable convolution kernels; they must agree to 1e-5 in f32.
/// im2col is the fast path (GEMM over unrolled patches), direct is the
/// reference loop nest.
enum class ConvAlgo { im2col, direct };

/// 2-D convolution, NCHW. weight [K,C,kh,kw], bias [K] (pass an undefined
/// tensor for no bias). Odd kernels only; output H' = (H+2p-kh)/stride + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int padding, ConvAlgo algo = ConvAlgo::im2col);

/// Running statistics owned by the layer; batch_norm updates them in train
/// mode and requires them initialized in eval mode.
template <typename T>
struct BnStats {
  std::vector<T> mean, var;
  bool initialized = false;
};

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BnStats<T>& stats, bool train, T eps = T(1e-5), T momentum = T(0.9));

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh_act(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.01));
/// alpha has one entry per channel (dim 1 of x); learns jointly with the model.
template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& alpha);

/// |x| with subgradient 0 at x == 0.
template <typename T>
Tensor<T> abs_op(const Tensor<T>& x);

/// Stacks [N,Ci,H,W] inputs along the channel axis in argument order.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs);

template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, int window, int stride, int padding = 0);

/// [N,C,H,W] -> [N,C], plane mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// x [N,F] * weight [O,F]^T + bias [O] -> [N,O].
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Mean over all elements of (pred - target)^2.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Binary cross-entropy over per-sample stego probabilities, clamped to
/// [eps, 1-eps] (eps = 1e-7) so the loss stays finite. Mean reduction.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& probabilities, const std::vector<int>& labels);

}  // namespace mcnet
