#pragma once

#include <string>
#include <vector>

#include "rfnet/label_map.hpp"
#include "rfnet/taxonomy.hpp"
#include "rfnet/tensor.hpp"

namespace rfnet {

/// One mini-batch for the multi-dataset loss. `logits` is [N,K,H,W]; labels
/// are unified ids (after remap_labels) and `sources` name each sample's dataset.
struct LossBatch {
  Tensor logits;
  std::vector<LabelMap> labels;
  std::vector<std::string> sources;
};

struct LossOptions {
  /// When false every non-ignore pixel has weight 1 regardless of source.
  bool masking = true;
};

/// Per-pixel weights for one sample: 1 for set A labels, lambda(source) for
/// set B labels, 0 for the ignore id.
Tensor pixel_weights(const LabelMap& labels, const std::string& source,
                     const LabelTaxonomy& taxonomy, const LossOptions& options = {});

/// Mean over samples of the per-sample weighted cross entropy.
Tensor multisource_loss(const LossBatch& batch, const LabelTaxonomy& taxonomy,
                        const LossOptions& options = {});

}  // namespace rfnet
