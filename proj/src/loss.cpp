#include "rfnet/loss.hpp"

#include "rfnet/error.hpp"
#include "rfnet/ops.hpp"

namespace rfnet {

Tensor pixel_weights(const LabelMap& labels, const std::string& source,
                     const LabelTaxonomy& taxonomy, const LossOptions& options) {
  if (labels.size() == 0) throw DataError("empty label map");
  const double lambda = options.masking ? lambda_select(source, taxonomy) : 1.0;
  if (!options.masking && !taxonomy.is_registered(source)) {
    throw DataError("unknown source dataset '" + source + "'");
  }
  const int k = taxonomy.num_classes();
  Tensor w(Shape{labels.height, labels.width});
  auto out = w.data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int id = labels.data[i];
    if (id == taxonomy.ignore_id) {
      out[i] = 0.0;
    } else if (id < 0 || id >= k) {
      throw DataError("label " + std::to_string(id) + " outside taxonomy");
    } else {
      out[i] = taxonomy.classes[static_cast<std::size_t>(id)].set == ClassSet::kA ? 1.0 : lambda;
    }
  }
  return w;
}

Tensor multisource_loss(const LossBatch& batch, const LabelTaxonomy& taxonomy,
                        const LossOptions& options) {
  const auto& dims = batch.logits.dims();
  if (dims.size() != 4) {
    throw ShapeError("multisource_loss expects [N,K,H,W] logits, got " + shape_to_string(dims));
  }
  const std::size_t n = dims[0];
  if (batch.labels.size() != n || batch.sources.size() != n) {
    throw ShapeError("multisource_loss: " + std::to_string(n) + " logits but " +
                     std::to_string(batch.labels.size()) + " label maps and " +
                     std::to_string(batch.sources.size()) + " sources");
  }
  if (static_cast<int>(dims[1]) != taxonomy.num_classes()) {
    throw ConfigError("logits carry " + std::to_string(dims[1]) + " classes, taxonomy has " +
                      std::to_string(taxonomy.num_classes()));
  }
  Tensor total;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& labels = batch.labels[i];
    if (labels.height != dims[2] || labels.width != dims[3]) {
      throw ShapeError("label map " + std::to_string(labels.height) + "x" +
                       std::to_string(labels.width) + " does not match logits " +
                       shape_to_string(dims));
    }
    Tensor w = pixel_weights(labels, batch.sources[i], taxonomy, options);
    Tensor li = masked_softmax_cross_entropy(select_batch(batch.logits, i), labels, w,
                                             taxonomy.ignore_id);
    total = total.defined() ? add(total, li) : li;
  }
  return scale(total, 1.0 / static_cast<double>(n));
}

}  // namespace rfnet
