#pragma once

#include <map>
#include <string>
#include <vector>

#include "rfnet/label_map.hpp"

namespace rfnet {

/// Set A: classes every dataset annotates consistently. Set B: classes whose
/// annotation conflicts across datasets; only the standard dataset's labels
/// for them are trusted.
enum class ClassSet { kA, kB };

struct ClassInfo {
  int id;
  std::string name;
  ClassSet set;
};

struct DatasetInfo {
  std::string id;
  bool standard;
};

/// Unified label space shared by several datasets.
///
/// Text form, one directive per line:
///   class <id> <name> <A|B>
///   dataset <id> <standard|aux>
///   remap <dataset> <raw> <unified|ignore>
///   ignore <id>            (optional, default 255)
class LabelTaxonomy {
 public:
  std::vector<ClassInfo> classes;
  std::vector<DatasetInfo> datasets;
  std::map<std::string, std::map<int, int>> remap;
  int ignore_id = 255;

  int num_classes() const { return static_cast<int>(classes.size()); }
  const std::string& standard_dataset() const;
  bool is_registered(const std::string& dataset) const;
  ClassSet set_of(int class_id) const;
  int class_id(const std::string& name) const;

  /// Throws DataError on any broken invariant (ids not 0..K-1, duplicate
  /// names, not exactly one standard dataset, ignore id colliding with a
  /// class, remap targets outside the class set).
  void validate() const;

  static LabelTaxonomy parse(const std::string& text);
  static LabelTaxonomy load(const std::string& path);
  std::string serialize() const;

  /// Road-scene analog: road (A), sky, building, K-4 object classes (B),
  /// small obstacle (A, id K-1). Datasets "cityscapes_like" (standard, raw ids
  /// equal unified ids) and "lostfound_like" (raw 0 background -> ignore,
  /// 1 free space -> road, 2 obstacle -> small obstacle).
  ///
  /// With `background_as_class`, an extra class "background" (id K) receives
  /// lostfound_like background pixels instead of ignore; this models naive
  /// dataset mixing.
  static LabelTaxonomy synthetic(int num_classes, bool background_as_class = false);
};

/// Conflict selector: 1 for samples of the standard dataset, 0 otherwise.
int lambda_select(const std::string& sample_source, const LabelTaxonomy& taxonomy);

/// Maps raw dataset ids to unified ids (or the ignore id) through the
/// dataset's remap table.
LabelMap remap_labels(const LabelMap& raw, const std::string& source,
                      const LabelTaxonomy& taxonomy);

}  // namespace rfnet
