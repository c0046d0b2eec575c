#pragma once

// Differentiable tensor primitives. Spatial ops accept either a single map
// [C,H,W] or a batch [N,C,H,W]; the output keeps the input's rank.

#include <cstddef>
#include <vector>

#include "rfnet/label_map.hpp"
#include "rfnet/tensor.hpp"

namespace rfnet {

enum class Mode { kTrain, kEval };

/// Running statistics of one batch-norm layer. The tensors are registered as
/// non-trainable buffers so checkpoints carry them.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(Shape{channels}, 0.0), running_var(Shape{channels}, 1.0) {}
};

/// Cross-correlation with zero padding. `bias` may be an undefined Tensor.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride = 1, int padding = 0);

/// Batch normalization over [N,C,H,W]. Train mode normalizes with batch
/// statistics (biased variance) and updates `state` with the unbiased one.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Mode mode);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// Sum of all elements, as a [1] tensor.
Tensor sum(const Tensor& x);

/// out[c,h,w] = features[c,h,w] * weights[c]; batched form takes weights [N,C].
Tensor channel_scale(const Tensor& features, const Tensor& weights);

Tensor max_pool2d(const Tensor& input, int kernel, int stride, int padding = 0);
Tensor avg_pool2d(const Tensor& input, int kernel, int stride);
/// [C,H,W] -> [C]; [N,C,H,W] -> [N,C].
Tensor global_avg_pool(const Tensor& input);
/// Averages over an aligned out_h x out_w partition of each plane
/// (bin i spans [floor(i*H/out), ceil((i+1)*H/out))).
Tensor adaptive_avg_pool2d(const Tensor& input, int out_h, int out_w);

/// Bilinear resampling with half-pixel centers (no corner alignment).
Tensor bilinear_resize(const Tensor& input, int out_h, int out_w);

/// Concatenates along the channel axis (axis 0 for rank 3, axis 1 for rank 4).
Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, Shape dims);
/// [N,...] -> [...] for batch index n.
Tensor select_batch(const Tensor& x, std::size_t n);
/// Stacks equal-shaped tensors along a new leading axis.
Tensor stack_batch(const std::vector<Tensor>& items);

/// Weighted mean over pixels of -log softmax(logits)[label].
///
/// logits [K,H,W]; weights [H,W] non-negative. Pixels labelled `ignore_id`
/// must carry weight 0. Returns 0 (with zero gradient) when all weights are 0.
Tensor masked_softmax_cross_entropy(const Tensor& logits, const LabelMap& labels,
                                    const Tensor& pixel_weights, int ignore_id);

/// Per-pixel argmax over the channel axis of [K,H,W] logits.
LabelMap argmax_channels(const Tensor& logits);

}  // namespace rfnet
