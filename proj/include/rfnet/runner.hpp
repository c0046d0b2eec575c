#pragma once

// Training, evaluation, ablation and diagnostics behind the command-line tool.
// Every entry point computes its full result in memory and only then writes
// files (each atomically), so a failure leaves no partial reports.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rfnet/checkpoint.hpp"
#include "rfnet/loss.hpp"
#include "rfnet/metrics.hpp"
#include "rfnet/model.hpp"
#include "rfnet/synth.hpp"
#include "rfnet/taxonomy.hpp"

namespace rfnet {

/// Fixed output names under the run's output directory.
namespace outputs {
inline constexpr const char* kTrainLog = "train_log.csv";
inline constexpr const char* kCheckpoint = "checkpoint.rfc";
inline constexpr const char* kClassIou = "class_iou.csv";
inline constexpr const char* kBinnedIou = "binned_iou.csv";
inline constexpr const char* kPredictions = "predictions";
inline constexpr const char* kAblation = "ablation.csv";
inline constexpr const char* kGradCheck = "grad_check.csv";
inline constexpr const char* kParamCount = "param_count.csv";
inline constexpr const char* kFeatures = "features";
}  // namespace outputs

struct RunConfig {
  /// Defaults to the toy preset (rfnet, 5 classes, 64x64). num_classes is the
  /// class count of the label taxonomy being scored.
  ModelConfig model = ModelConfig::toy_preset(Variant::kRfnet, 5);
  int epochs = 200;
  int batch = 8;
  double lr = 4e-4;
  double min_lr = 1e-6;
  double weight_decay = 1e-4;
  double pretrained_multiplier = 0.25;
  std::uint64_t seed = 1;
  std::string data_root;
  std::string taxonomy_path;  // empty: LabelTaxonomy::synthetic(num_classes)
  std::string out_dir = "out";
  /// false: every pixel weighs 1 and, with the synthetic taxonomy, the
  /// auxiliary dataset's background becomes an extra trained class.
  bool masking = true;
  bool augment = true;
  bool scale_disparity = true;
  int disparity_crop_left = 0;
  int disparity_crop_bottom = 0;
  double max_disparity = 64.0;
  double depth_scale = 100.0;
  std::vector<double> bins{20, 40, 60, 80, 100};
  int eval_batch = 8;

  void validate() const;
  /// Unknown keys are a ConfigError.
  static RunConfig from_key_values(const KeyValues& kv);
  KeyValues to_key_values() const;
  std::string serialize() const;
};

/// Taxonomy the validation split is scored with.
LabelTaxonomy eval_taxonomy(const RunConfig& config);
/// Taxonomy the loss is computed with (adds a background class when masking
/// is off and the taxonomy is synthetic).
LabelTaxonomy train_taxonomy(const RunConfig& config);
/// The model config actually built: num_classes follows train_taxonomy.
ModelConfig network_config(const RunConfig& config);

/// Named RNG streams derived from the run seed.
enum class Stream : std::uint64_t { kInit = 1, kShuffle = 2, kAugment = 3, kGradCheck = 4 };
std::uint64_t stream_seed(std::uint64_t seed, Stream stream, std::uint64_t index = 0);

/// Network inputs for one sample: rgb as stored, disparity preprocessed,
/// labels remapped to unified ids.
struct PreparedSample {
  Sample sample;
  std::string id;
};
std::vector<PreparedSample> prepare_split(const SplitData& split, const LabelTaxonomy& taxonomy,
                                          const RunConfig& config);

OptimizerState make_run_optimizer(const NetworkGraph& graph, const RunConfig& config);

struct EpochRecord {
  int epoch;
  double lr;
  double loss;
};

struct TrainResult {
  NetworkGraph graph;
  OptimizerState optimizer;
  std::vector<EpochRecord> log;
};

/// Trains from `start_epoch` (0 for a fresh run). When `resume` is given its
/// parameters, batch-norm buffers and Adam moments seed the run.
TrainResult train(const RunConfig& config, const SplitData& train_split,
                  const Checkpoint* resume = nullptr);

std::string train_log_csv(const std::vector<EpochRecord>& log);
std::vector<EpochRecord> parse_train_log(const std::string& csv);

struct EvalResult {
  ConfusionMatrix confusion;
  IouReport report;
  DepthBinnedReport binned;
  std::vector<std::string> ids;
  std::vector<LabelMap> predictions;
  std::vector<std::string> class_names;
  int scored_classes = 0;
  int obstacle_class = 0;
};

/// Eval-mode forward over the split. With `gt_as_prediction` the ground truth
/// is scored against itself (harness self-check).
EvalResult evaluate(NetworkGraph& graph, const SplitData& split, const RunConfig& config,
                    bool gt_as_prediction = false);
/// Scores already-computed predictions (same order as the split).
EvalResult score_predictions(const std::vector<LabelMap>& predictions, const SplitData& split,
                             const RunConfig& config);

/// Writes train_log.csv and checkpoint.rfc under config.out_dir.
void write_train_outputs(const RunConfig& config, const TrainResult& result);
/// Writes class_iou.csv, binned_iou.csv and predictions/ under `out_dir`.
void write_eval_outputs(const std::filesystem::path& out_dir, const EvalResult& result,
                        int ignore_id);

struct AblationRow {
  Variant variant;
  std::size_t params;
  std::size_t params_full_preset;
  double miou;
  std::optional<double> obstacle_iou;
};
std::vector<AblationRow> ablate(const RunConfig& config, const SplitData& train_split,
                                const SplitData& val_split,
                                const std::vector<Variant>& variants);
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct GradCheckEntry {
  std::string name;
  std::size_t index;
  double analytic;
  double numeric;
  double relative_error;
};
struct GradCheckResult {
  std::vector<GradCheckEntry> entries;
  double max_relative_error = 0.0;
  /// Draws rejected because the loss is not smooth within +-h of the point.
  int skipped = 0;
};
/// Central differences (step h) on `samples` randomly chosen scalars of a
/// freshly built network, `batch` random inputs, train-mode forward. A drawn
/// scalar whose central differences at h and h/2 disagree by more than
/// `kink_tolerance` straddles a ReLU or max-pool kink and is redrawn.
GradCheckResult grad_check(const ModelConfig& model, std::uint64_t seed, int samples = 50,
                           double h = 1e-4, int batch = 4, double kink_tolerance = 1e-5);
std::string grad_check_csv(const GradCheckResult& result);

std::string param_count_csv(const NetworkGraph& graph);

/// Second-stage RGB, depth and fused maps for the first `count` samples of the
/// split; written as <id>_{rgb,depth,fused}.rft plus .ppm grids.
void dump_features(NetworkGraph& graph, const SplitData& split, const RunConfig& config,
                   int count, const std::filesystem::path& out_dir);

}  // namespace rfnet
