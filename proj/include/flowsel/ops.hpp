#pragma once

// Differentiable operations on Graph values. Shapes must match exactly;
// the only broadcast is a one-element "scalar" operand where stated.

#include "flowsel/tensor.hpp"

#include <cstdint>
#include <vector>

namespace flowsel::nn {

/// Same-padded stride-1 convolution with a (C_out, C_in/groups, k, k) kernel,
/// k in {1, 3}; groups is 1 (dense) or C_in (depthwise). Throws ShapeError.
Var conv2d(Graph& g, Var x, Var kernel, std::size_t groups = 1);

/// Adds a (1, C, 1, 1) per-channel bias.
Var add_bias(Graph& g, Var x, Var bias);

enum class BatchNormMode {
    batch,   ///< normalize with the statistics of this batch
    frozen,  ///< normalize with the stored running statistics
};

struct BatchNormOptions {
    BatchNormMode mode = BatchNormMode::batch;
    bool update_running = true;  ///< batch mode only
    double eps = 1e-5;
    double momentum = 0.1;
};

/// Per-channel normalization over (N, H, W). scale/shift are (1, C, 1, 1)
/// weights; running_mean/running_var are (1, C, 1, 1) buffers.
Var batchnorm(Graph& g, Var x, Var scale, Var shift, Param& running_mean, Param& running_var,
              const BatchNormOptions& opt = {});

/// 2x2 mean pooling with stride 2; an odd trailing row/column is dropped.
Var avgpool2(Graph& g, Var x);

/// Nearest neighbour resize: source index floor(i * H / target_h).
Var upsample_nearest(Graph& g, Var x, std::size_t target_h, std::size_t target_w);

/// Per-sample gather: output cell k of sample n copies source cell
/// maps[n][k] (flat h*W+w index into the input plane), or 0 when it is -1.
/// maps has one entry per sample, or a single entry shared by all samples.
Var remap(Graph& g, Var x, const std::vector<std::vector<std::int32_t>>& maps, std::size_t out_h,
          std::size_t out_w);

Var relu(Graph& g, Var x);

/// Logistic function. Inputs are clamped to [-30, 30] so the result stays
/// strictly inside (0, 1); the gradient is zero outside the clamp.
Var sigmoid(Graph& g, Var x);

Var add(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);

/// c0 + c1 * x with constant coefficients.
Var affine(Graph& g, Var x, double c0, double c1);

/// s * x for a one-element s.
Var scale(Graph& g, Var x, Var s);

/// x + a * y for a one-element a.
Var scale_add(Graph& g, Var x, Var a, Var y);

/// Softmax across the channel axis at every (n, h, w).
Var softmax_channels(Graph& g, Var x);

/// Element c of a (1, C, 1, 1) tensor as a one-element value.
Var pick(Graph& g, Var x, std::size_t c);

/// Elementwise mean of equally shaped values (summed in order, then divided).
Var mean_of(Graph& g, const std::vector<Var>& xs);

/// mean((pred - target)^2) over all elements.
Var mse_loss(Graph& g, Var pred, Var target);

/// sum_i x_i * weights_i with constant weights.
Var dot_const(Graph& g, Var x, const Tensor4& weights);

/// Same value, no gradient path to x.
Var detach(Graph& g, Var x);

/// Heavy-ball SGD on trainable non-buffer params in registration order:
/// v = momentum * v + grad; value -= lr * v.
void sgd_step(ParamStore& params, double lr, double momentum = 0.9);

}  // namespace flowsel::nn
