#pragma once

// Confusion-matrix evaluation, per-class IoU and depth-binned IoU.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rfnet/label_map.hpp"
#include "rfnet/tensor.hpp"

namespace rfnet {

/// K x K counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 0);

  int num_classes() const { return k_; }
  std::uint64_t at(int gt, int pred) const { return counts_[gt * k_ + pred]; }
  std::uint64_t total() const;
  std::uint64_t row_sum(int gt) const;
  std::uint64_t col_sum(int pred) const;

  /// cm[gt, pred] += 1 for every pixel whose gt is not `ignore_id`.
  void accumulate(const LabelMap& pred, const LabelMap& gt, int ignore_id);
  void add(int gt, int pred, std::uint64_t count = 1);
  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

struct IouReport {
  /// Empty for classes whose union is zero.
  std::vector<std::optional<double>> per_class;
  /// Mean over defined classes; NaN when none is defined.
  double miou = 0.0;
  int defined = 0;
};

/// IoU per class. Only the first `scored_classes` classes enter the mean
/// (all when negative).
IouReport iou(const ConfusionMatrix& cm, int scored_classes = -1);

/// depth = scale_const / d, clamped to max_depth; d == 0 gives max_depth.
Tensor depth_from_disparity(const Tensor& disparity, double scale_const, double max_depth = 100.0);

struct DepthBinnedReport {
  std::vector<double> edges;  // upper edges; bin b covers (edges[b-1], edges[b]], edges[-1] = 0
  std::vector<ConfusionMatrix> bins;
  std::vector<IouReport> reports;
  /// IoU of the tracked class per bin (empty when undefined).
  std::vector<std::optional<double>> tracked_iou;
};

/// Accumulates predictions into depth bins. Bins are left-open, right-closed
/// and the last edge must equal 100.
class DepthBinnedAccumulator {
 public:
  DepthBinnedAccumulator(std::vector<double> edges, int num_classes, int ignore_id,
                         double max_depth = 100.0);

  /// `depth` is [1,H,W] or [H,W] with values in (0, max_depth].
  void accumulate(const LabelMap& pred, const LabelMap& gt, const Tensor& depth);
  DepthBinnedReport report(int tracked_class, int scored_classes = -1) const;
  ConfusionMatrix total() const;

 private:
  std::vector<double> edges_;
  int ignore_id_;
  std::vector<ConfusionMatrix> bins_;
};

DepthBinnedReport binned_eval(const LabelMap& pred, const LabelMap& gt, const Tensor& depth,
                              const std::vector<double>& edges, int num_classes, int ignore_id,
                              int tracked_class);

/// `class,iou` rows (empty IoU for undefined classes) followed by `mIoU,<v>`.
std::string class_iou_csv(const std::vector<std::string>& class_names, const IouReport& report);
/// One row per bin: `bin_low,bin_high,pixels,miou,<tracked>_iou`.
std::string binned_iou_csv(const DepthBinnedReport& report, const std::string& tracked_name);

/// Fixed class -> RGB palette; ids beyond the palette cycle, the ignore id
/// (or any negative id) is black.
std::array<std::uint8_t, 3> palette_color(int class_id, int ignore_id);
/// Binary P6 image of a label map coloured with palette_color.
std::string label_map_ppm(const LabelMap& labels, int ignore_id);
/// Binary P6 grayscale grid of the channels of a [C,H,W] map, each channel
/// min-max normalized independently.
std::string feature_grid_ppm(const Tensor& features);

/// Shortest round-trip decimal form, used by every CSV writer.
std::string format_double(double v);

}  // namespace rfnet
