#pragma once

// Synthetic RGB-D road scenes with two dataset analogs whose annotations
// conflict the way Cityscapes and Lost-and-Found do, plus disparity
// preprocessing, train-time augmentation and the on-disk dataset layout.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rfnet/label_map.hpp"
#include "rfnet/rng.hpp"
#include "rfnet/tensor.hpp"

namespace rfnet {

enum class DatasetAnalog { kCityscapesLike, kLostfoundLike };

/// Dataset id used by LabelTaxonomy::synthetic for each analog.
std::string analog_id(DatasetAnalog analog);
DatasetAnalog parse_analog(const std::string& id);

/// Raw label ids of the lostfound_like analog.
inline constexpr int kRawBackground = 0;
inline constexpr int kRawFreeSpace = 1;
inline constexpr int kRawObstacle = 2;

struct SceneSpec {
  std::uint64_t seed = 0;
  int height = 64;
  int width = 64;
  /// Unified class count K of the matching synthetic taxonomy; cityscapes_like
  /// scenes use raw ids 0..K-2 (road, sky, building, objects).
  int num_classes = 5;
  int num_obstacles = 2;  // lostfound_like only
  int obstacle_min = 4;
  int obstacle_max = 10;
  /// Obstacle disparity above the road at its base row, in road steps (> 1).
  double obstacle_lift = 8.0;
  /// Flat painted markings: zero height, same color and size statistics as
  /// obstacles, labelled road.
  int num_markings = 2;
  int num_objects = 2;
  double max_road_disparity = 40.0;
  /// Fraction of non-obstacle pixels whose disparity is dropped to 0.
  double unmatched_fraction = 0.05;
  double color_noise = 0.04;

  void validate() const;
};

struct Rect {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  int bottom() const { return top + height - 1; }
  bool contains(int r, int c) const {
    return r >= top && r < top + height && c >= left && c < left + width;
  }
};

/// Geometry of a generated scene, for tests and diagnostics.
struct SceneLayout {
  int horizon = 0;  // first road row
  double road_step = 0.0;
  std::vector<Rect> obstacles;
  std::vector<Rect> markings;
  std::vector<Rect> objects;
  std::vector<int> object_classes;
  std::vector<std::uint8_t> unmatched;  // H*W, 1 where disparity was dropped

  /// Disparity of the road surface at `row` (extended below the image).
  double road_disparity(int row) const;
};

struct Sample {
  Tensor rgb;        // [3,H,W] in [0,1]
  Tensor disparity;  // [1,H,W], >= 0, 0 = unmatched
  LabelMap labels;   // raw ids of `source`
  std::string source;
};

Sample generate(const SceneSpec& spec, DatasetAnalog analog, SceneLayout* layout = nullptr);

/// Removes `crop_left` columns and `crop_bottom` rows, resizes back to H x W
/// bilinearly and divides by `max_disparity`.
Tensor preprocess_disparity(const Tensor& disparity, int crop_left, int crop_bottom,
                            double max_disparity);

struct AugmentConfig {
  int crop_height = 64;
  int crop_width = 64;
  double scale_min = 0.5;
  double scale_max = 2.0;
  double flip_probability = 0.5;
  bool scale_disparity = true;
  int ignore_id = 255;
};

/// One augmentation draw. Crop offsets index the scaled plane and may be
/// negative, in which case the crop window is padded.
struct AugmentParams {
  double scale = 1.0;
  bool flip = false;
  int crop_top = 0;
  int crop_left = 0;
};

AugmentParams draw_augment(const AugmentConfig& config, int height, int width, Rng& rng);
/// Scale (labels nearest neighbor), flip, then crop. Padding is zero for
/// pixels and `ignore_id` for labels. Labels must already be unified ids.
Sample apply_augment(const Sample& sample, const AugmentParams& params,
                     const AugmentConfig& config);
Sample augment(const Sample& sample, const AugmentConfig& config, Rng& rng);

/// `<root>/<split>/manifest.txt` lines are `<sample-id> <source>`; each sample
/// is stored as `<id>.rgb`, `<id>.disp`, `<id>.label` tensor files.
struct ManifestEntry {
  std::string id;
  std::string source;
};

void write_sample(const std::filesystem::path& split_dir, const std::string& id,
                  const Sample& sample);
Sample read_sample(const std::filesystem::path& split_dir, const ManifestEntry& entry);
void write_manifest(const std::filesystem::path& split_dir,
                    const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& split_dir);

struct SplitData {
  std::vector<ManifestEntry> entries;
  std::vector<Sample> samples;
};
SplitData load_split(const std::filesystem::path& root, const std::string& split);

struct SyntheticDatasetConfig {
  std::uint64_t seed = 1;
  int train_samples = 200;
  int val_samples = 50;
  int height = 64;
  int width = 64;
  int num_classes = 5;
  /// Fraction of samples drawn from the lostfound_like analog.
  double lostfound_fraction = 0.5;
  int obstacles_min = 1;
  int obstacles_max = 3;
  int markings_min = 1;
  int markings_max = 3;
  int objects_min = 0;
  int objects_max = 2;
  SceneSpec base;  // size and class fields are overridden from this struct
};

/// Generates and writes the train and val splits under `root`.
void generate_dataset(const std::filesystem::path& root, const SyntheticDatasetConfig& config);

}  // namespace rfnet
