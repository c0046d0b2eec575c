#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "rfnet/error.hpp"
#include "rfnet/runner.hpp"
#include "rfnet/tensor_io.hpp"

namespace {

using namespace rfnet;

struct CommonFlags {
  std::string config_path;
  std::string seed;
  std::string epochs;
  std::string batch;
  std::string variant;
  std::string bins;
  std::string out;
  std::string data;
  std::string masking;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key = value run configuration file");
    app->add_option("--seed", seed, "run seed");
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--batch", batch, "mini-batch size");
    app->add_option("--variant", variant, "rfnet|single_rgb|rgbd_stack|rgbd_concat|rgb_rgb");
    app->add_option("--bins", bins, "depth bin upper edges, comma separated, last = 100");
    app->add_option("--out", out, "output directory");
    app->add_option("--data", data, "dataset root (with train/ and val/)");
    app->add_option("--masking", masking, "true: multi-dataset masking, false: naive mixing");
  }

  KeyValues key_values() const {
    KeyValues kv = config_path.empty() ? KeyValues{} : load_key_values(config_path);
    auto over = [&](const char* key, const std::string& v) {
      if (!v.empty()) kv.set(key, v);
    };
    over("seed", seed);
    over("epochs", epochs);
    over("batch", batch);
    over("variant", variant);
    over("bins", bins);
    over("out", out);
    over("data_root", data);
    over("masking", masking);
    return kv;
  }
};

SplitData require_split(const RunConfig& config, const std::string& split) {
  if (config.data_root.empty()) throw ConfigError("no dataset root given (--data or data_root)");
  return load_split(config.data_root, split);
}

/// Run configuration for a command that starts from a checkpoint: the
/// checkpoint's model and training-time settings fill keys the user left out.
RunConfig config_for_checkpoint(KeyValues kv, const Checkpoint& ckpt) {
  const KeyValues model = parse_key_values(ckpt.config.serialize());
  for (const auto& [k, v] : model.all()) {
    if (k != "num_classes" && !kv.has(k)) kv.set(k, v);
  }
  for (const char* key : {"num_classes", "masking", "taxonomy"}) {
    if (!kv.has(key) && ckpt.meta.has(key)) kv.set(key, ckpt.meta.get(key));
  }
  return RunConfig::from_key_values(kv);
}

NetworkGraph graph_from_checkpoint(const Checkpoint& ckpt) {
  NetworkGraph graph = build(ckpt.config, 0);
  restore_graph(ckpt, graph);
  return graph;
}

void print_file(const std::string& text) { std::cout << text; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RGB-D fusion segmentation: data generation, training, evaluation, diagnostics"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "write a synthetic two-dataset RGB-D corpus");
  SyntheticDatasetConfig gen_cfg;
  std::string gen_out;
  gen->add_option("--out", gen_out, "dataset root")->required();
  gen->add_option("--seed", gen_cfg.seed, "generator seed");
  gen->add_option("--train", gen_cfg.train_samples, "training samples");
  gen->add_option("--val", gen_cfg.val_samples, "validation samples");
  gen->add_option("--height", gen_cfg.height, "image height");
  gen->add_option("--width", gen_cfg.width, "image width");
  gen->add_option("--classes", gen_cfg.num_classes, "unified class count");
  gen->add_option("--lostfound-fraction", gen_cfg.lostfound_fraction,
                  "fraction of samples from the auxiliary dataset");
  gen->add_option("--obstacle-lift", gen_cfg.base.obstacle_lift,
                  "obstacle disparity above the road, in road steps");
  gen->add_option("--unmatched", gen_cfg.base.unmatched_fraction,
                  "fraction of disparity pixels dropped to 0");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model; writes train_log.csv and checkpoint.rfc");
  CommonFlags train_flags;
  train_flags.attach(train_cmd);
  std::string resume_path;
  train_cmd->add_option("--resume", resume_path, "checkpoint to continue from");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  CommonFlags eval_flags;
  eval_flags.attach(eval_cmd);
  std::string eval_ckpt;
  std::string eval_split = "val";
  bool gt_as_prediction = false;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--split", eval_split, "split directory name");
  eval_cmd->add_flag("--gt-as-prediction", gt_as_prediction,
                     "score the ground truth against itself (harness self-check)");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate every variant");
  CommonFlags ablate_flags;
  ablate_flags.attach(ablate_cmd);
  std::vector<std::string> ablate_variants;
  ablate_cmd->add_option("--variants", ablate_variants, "subset of variants (default all)");

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "gradient check, feature dumps, parameter counts");
  diag->require_subcommand(1);
  auto* grad_cmd = diag->add_subcommand("grad-check", "finite-difference check of the full network");
  CommonFlags grad_flags;
  grad_flags.attach(grad_cmd);
  int grad_samples = 50;
  int grad_size = 32;
  grad_cmd->add_option("--samples", grad_samples, "parameters to sample");
  grad_cmd->add_option("--size", grad_size, "input height and width");

  auto* dump_cmd = diag->add_subcommand("dump-features", "write second-stage RGB/depth/fused maps");
  CommonFlags dump_flags;
  dump_flags.attach(dump_cmd);
  std::string dump_ckpt;
  std::string dump_split = "val";
  int dump_count = 4;
  dump_cmd->add_option("--checkpoint", dump_ckpt, "checkpoint file")->required();
  dump_cmd->add_option("--split", dump_split, "split directory name");
  dump_cmd->add_option("--count", dump_count, "number of samples");

  auto* count_cmd = diag->add_subcommand("param-count", "total and per-group parameter counts");
  CommonFlags count_flags;
  count_flags.attach(count_cmd);
  std::string preset = "toy";
  count_cmd->add_option("--preset", preset, "toy|full|config");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      generate_dataset(gen_out, gen_cfg);
      std::cout << "wrote " << gen_cfg.train_samples << " train / " << gen_cfg.val_samples
                << " val samples to " << gen_out << '\n';
    } else if (*train_cmd) {
      RunConfig cfg = RunConfig::from_key_values(train_flags.key_values());
      const SplitData data = require_split(cfg, "train");
      std::optional<Checkpoint> ckpt;
      if (!resume_path.empty()) ckpt = load_checkpoint(resume_path);
      TrainResult result = train(cfg, data, ckpt ? &*ckpt : nullptr);
      write_train_outputs(cfg, result);
      for (const auto& r : result.log) {
        std::cout << "epoch " << r.epoch << " lr " << format_double(r.lr) << " loss "
                  << format_double(r.loss) << '\n';
      }
    } else if (*eval_cmd) {
      const Checkpoint ckpt = load_checkpoint(eval_ckpt);
      RunConfig cfg = config_for_checkpoint(eval_flags.key_values(), ckpt);
      const SplitData data = require_split(cfg, eval_split);
      NetworkGraph graph = graph_from_checkpoint(ckpt);
      const EvalResult result = evaluate(graph, data, cfg, gt_as_prediction);
      write_eval_outputs(cfg.out_dir, result, eval_taxonomy(cfg).ignore_id);
      print_file(class_iou_csv(result.class_names, result.report));
    } else if (*ablate_cmd) {
      RunConfig cfg = RunConfig::from_key_values(ablate_flags.key_values());
      std::vector<Variant> variants;
      for (const auto& v : ablate_variants) variants.push_back(parse_variant(v));
      if (variants.empty()) variants.assign(all_variants().begin(), all_variants().end());
      const SplitData train_data = require_split(cfg, "train");
      const SplitData val_data = require_split(cfg, "val");
      const std::string csv = ablation_csv(ablate(cfg, train_data, val_data, variants));
      io::write_file_atomic(std::filesystem::path(cfg.out_dir) / outputs::kAblation, csv);
      print_file(csv);
    } else if (*grad_cmd) {
      RunConfig cfg = RunConfig::from_key_values(grad_flags.key_values());
      ModelConfig m = cfg.model;
      m.height = grad_size;
      m.width = grad_size;
      if (m.spp_grids.back() > grad_size / 32) m.spp_grids = {1};
      const GradCheckResult result = grad_check(m, cfg.seed, grad_samples);
      io::write_file_atomic(std::filesystem::path(cfg.out_dir) / outputs::kGradCheck,
                            grad_check_csv(result));
      std::cout << "max relative error " << format_double(result.max_relative_error) << '\n';
    } else if (*dump_cmd) {
      const Checkpoint ckpt = load_checkpoint(dump_ckpt);
      RunConfig cfg = config_for_checkpoint(dump_flags.key_values(), ckpt);
      const SplitData data = require_split(cfg, dump_split);
      NetworkGraph graph = graph_from_checkpoint(ckpt);
      dump_features(graph, data, cfg, dump_count,
                    std::filesystem::path(cfg.out_dir) / outputs::kFeatures);
    } else if (*count_cmd) {
      RunConfig cfg = RunConfig::from_key_values(count_flags.key_values());
      ModelConfig m;
      if (preset == "full") {
        m = ModelConfig::full_preset(cfg.model.variant);
      } else if (preset == "toy") {
        m = ModelConfig::toy_preset(cfg.model.variant, cfg.model.num_classes);
      } else if (preset == "config") {
        m = cfg.model;
      } else {
        throw ConfigError("unknown preset '" + preset + "' (toy|full|config)");
      }
      const NetworkGraph graph = build(m, cfg.seed);
      const std::string csv = param_count_csv(graph);
      io::write_file_atomic(std::filesystem::path(cfg.out_dir) / outputs::kParamCount, csv);
      print_file(csv);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
