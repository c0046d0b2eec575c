#include "rfnet/runner.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "rfnet/error.hpp"
#include "rfnet/ops.hpp"
#include "rfnet/optim.hpp"
#include "rfnet/rng.hpp"
#include "rfnet/tensor_io.hpp"

namespace rfnet {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
  model.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (eval_batch < 1) throw ConfigError("eval_batch must be >= 1");
  if (!(min_lr > 0) || !(min_lr <= lr)) throw ConfigError("need 0 < min_lr <= lr");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (!(pretrained_multiplier > 0)) throw ConfigError("pretrained_multiplier must be positive");
  if (!(max_disparity > 0)) throw ConfigError("max_disparity must be positive");
  if (!(depth_scale > 0)) throw ConfigError("depth_scale must be positive");
  DepthBinnedAccumulator(bins, 2, -1);
}

RunConfig RunConfig::from_key_values(const KeyValues& kv) {
  static const std::set<std::string> kKnown{
      "variant",       "stage_widths",  "blocks_per_stage", "decoder_width",
      "spp_grids",     "num_classes",   "height",           "width",
      "epochs",        "batch",         "lr",               "min_lr",
      "weight_decay",  "pretrained_multiplier",             "seed",
      "data_root",     "taxonomy",      "out",              "masking",
      "augment",       "scale_disparity",                   "disparity_crop_left",
      "disparity_crop_bottom",          "max_disparity",    "depth_scale",
      "bins",          "eval_batch"};
  for (const auto& [k, v] : kv.all()) {
    if (!kKnown.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }
  RunConfig c;
  auto& m = c.model;
  if (kv.has("variant")) m.variant = parse_variant(kv.get("variant"));
  if (kv.has("stage_widths")) {
    const auto w = parse_int_list(kv.get("stage_widths"));
    if (w.size() != 4) throw ConfigError("stage_widths needs 4 entries");
    std::copy(w.begin(), w.end(), m.stage_widths.begin());
  }
  if (kv.has("blocks_per_stage")) m.blocks_per_stage = parse_int(kv.get("blocks_per_stage"));
  if (kv.has("decoder_width")) m.decoder_width = parse_int(kv.get("decoder_width"));
  if (kv.has("spp_grids")) m.spp_grids = parse_int_list(kv.get("spp_grids"));
  if (kv.has("num_classes")) m.num_classes = parse_int(kv.get("num_classes"));
  if (kv.has("height")) m.height = parse_int(kv.get("height"));
  if (kv.has("width")) m.width = parse_int(kv.get("width"));
  if (kv.has("epochs")) c.epochs = parse_int(kv.get("epochs"));
  if (kv.has("batch")) c.batch = parse_int(kv.get("batch"));
  if (kv.has("lr")) c.lr = parse_double(kv.get("lr"));
  if (kv.has("min_lr")) c.min_lr = parse_double(kv.get("min_lr"));
  if (kv.has("weight_decay")) c.weight_decay = parse_double(kv.get("weight_decay"));
  if (kv.has("pretrained_multiplier")) {
    c.pretrained_multiplier = parse_double(kv.get("pretrained_multiplier"));
  }
  if (kv.has("seed")) {
    const std::string& text = kv.get("seed");
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), c.seed);
    if (ec != std::errc() || end != text.data() + text.size()) {
      throw ConfigError("seed must be a non-negative integer");
    }
  }
  c.data_root = kv.get_or("data_root", c.data_root);
  c.taxonomy_path = kv.get_or("taxonomy", c.taxonomy_path);
  c.out_dir = kv.get_or("out", c.out_dir);
  if (kv.has("masking")) c.masking = parse_bool(kv.get("masking"));
  if (kv.has("augment")) c.augment = parse_bool(kv.get("augment"));
  if (kv.has("scale_disparity")) c.scale_disparity = parse_bool(kv.get("scale_disparity"));
  if (kv.has("disparity_crop_left")) c.disparity_crop_left = parse_int(kv.get("disparity_crop_left"));
  if (kv.has("disparity_crop_bottom")) {
    c.disparity_crop_bottom = parse_int(kv.get("disparity_crop_bottom"));
  }
  if (kv.has("max_disparity")) c.max_disparity = parse_double(kv.get("max_disparity"));
  if (kv.has("depth_scale")) c.depth_scale = parse_double(kv.get("depth_scale"));
  if (kv.has("bins")) c.bins = parse_double_list(kv.get("bins"));
  if (kv.has("eval_batch")) c.eval_batch = parse_int(kv.get("eval_batch"));
  c.validate();
  return c;
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv;
  kv.set("variant", std::string(variant_name(model.variant)));
  kv.set("stage_widths", join_ints(model.stage_widths));
  kv.set("blocks_per_stage", std::to_string(model.blocks_per_stage));
  kv.set("decoder_width", std::to_string(model.decoder_width));
  kv.set("spp_grids", join_ints(model.spp_grids));
  kv.set("num_classes", std::to_string(model.num_classes));
  kv.set("height", std::to_string(model.height));
  kv.set("width", std::to_string(model.width));
  kv.set("epochs", std::to_string(epochs));
  kv.set("batch", std::to_string(batch));
  kv.set("lr", format_double(lr));
  kv.set("min_lr", format_double(min_lr));
  kv.set("weight_decay", format_double(weight_decay));
  kv.set("pretrained_multiplier", format_double(pretrained_multiplier));
  kv.set("seed", std::to_string(seed));
  if (!data_root.empty()) kv.set("data_root", data_root);
  if (!taxonomy_path.empty()) kv.set("taxonomy", taxonomy_path);
  kv.set("out", out_dir);
  kv.set("masking", masking ? "true" : "false");
  kv.set("augment", augment ? "true" : "false");
  kv.set("scale_disparity", scale_disparity ? "true" : "false");
  kv.set("disparity_crop_left", std::to_string(disparity_crop_left));
  kv.set("disparity_crop_bottom", std::to_string(disparity_crop_bottom));
  kv.set("max_disparity", format_double(max_disparity));
  kv.set("depth_scale", format_double(depth_scale));
  std::ostringstream bins_text;
  for (std::size_t i = 0; i < bins.size(); ++i) bins_text << (i ? "," : "") << format_double(bins[i]);
  kv.set("bins", bins_text.str());
  kv.set("eval_batch", std::to_string(eval_batch));
  return kv;
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  const KeyValues kv = to_key_values();
  for (const auto& [k, v] : kv.all()) os << k << " = " << v << '\n';
  return os.str();
}

LabelTaxonomy eval_taxonomy(const RunConfig& config) {
  if (!config.taxonomy_path.empty()) return LabelTaxonomy::load(config.taxonomy_path);
  return LabelTaxonomy::synthetic(config.model.num_classes);
}

LabelTaxonomy train_taxonomy(const RunConfig& config) {
  if (!config.taxonomy_path.empty()) return LabelTaxonomy::load(config.taxonomy_path);
  return LabelTaxonomy::synthetic(config.model.num_classes, !config.masking);
}

ModelConfig network_config(const RunConfig& config) {
  ModelConfig m = config.model;
  m.num_classes = train_taxonomy(config).num_classes();
  m.validate();
  return m;
}

std::uint64_t stream_seed(std::uint64_t seed, Stream stream, std::uint64_t index) {
  return derive_seed(derive_seed(seed, static_cast<std::uint64_t>(stream)), index);
}

std::vector<PreparedSample> prepare_split(const SplitData& split, const LabelTaxonomy& taxonomy,
                                          const RunConfig& config) {
  std::vector<PreparedSample> out;
  out.reserve(split.samples.size());
  for (std::size_t i = 0; i < split.samples.size(); ++i) {
    const Sample& s = split.samples[i];
    PreparedSample p;
    p.id = split.entries[i].id;
    p.sample.source = s.source;
    p.sample.rgb = s.rgb;
    p.sample.disparity = preprocess_disparity(s.disparity, config.disparity_crop_left,
                                              config.disparity_crop_bottom, config.max_disparity);
    p.sample.labels = remap_labels(s.labels, s.source, taxonomy);
    out.push_back(std::move(p));
  }
  return out;
}

OptimizerState make_run_optimizer(const NetworkGraph& graph, const RunConfig& config) {
  const auto params = graph.registry.trainable();
  const auto groups = graph.registry.trainable_groups();
  std::vector<double> mult(groups.size(), 1.0);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i] == ParamGroup::kPretrainedEligible) mult[i] = config.pretrained_multiplier;
  }
  return make_optimizer_state(params, mult, mult);
}

// ---------------------------------------------------------------------------
// Training

TrainResult train(const RunConfig& config, const SplitData& train_split, const Checkpoint* resume) {
  config.validate();
  if (train_split.samples.empty()) throw DataError("training split is empty");
  const LabelTaxonomy taxonomy = train_taxonomy(config);
  const ModelConfig net = network_config(config);
  const auto prepared = prepare_split(train_split, taxonomy, config);

  TrainResult result{build(net, stream_seed(config.seed, Stream::kInit)), {}, {}};
  NetworkGraph& graph = result.graph;
  result.optimizer = make_run_optimizer(graph, config);
  int start = 0;
  if (resume) {
    restore_graph(*resume, graph);
    restore_optimizer(*resume, graph, result.optimizer);
    start = parse_int(resume->meta.get("epochs_completed"));
    if (start > config.epochs) {
      throw ConfigError("checkpoint completed " + std::to_string(start) + " epochs, run has " +
                        std::to_string(config.epochs));
    }
  }

  std::vector<Tensor> params = graph.registry.trainable();
  AugmentConfig aug;
  aug.crop_height = net.height;
  aug.crop_width = net.width;
  aug.ignore_id = taxonomy.ignore_id;
  aug.scale_disparity = config.scale_disparity;
  const LossOptions loss_options{config.masking};
  const std::size_t n = prepared.size();

  for (int epoch = start; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, config.epochs, config.lr, config.min_lr);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(stream_seed(config.seed, Stream::kShuffle, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n - 1; i > 0; --i) {
      std::swap(order[i], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i)))]);
    }
    Rng aug_rng(stream_seed(config.seed, Stream::kAugment, static_cast<std::uint64_t>(epoch)));

    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(n, b + static_cast<std::size_t>(config.batch));
      std::vector<Tensor> rgbs;
      std::vector<Tensor> disps;
      LossBatch batch;
      for (std::size_t i = b; i < end; ++i) {
        const Sample& s = prepared[order[i]].sample;
        Sample a = config.augment ? augment(s, aug, aug_rng) : s;
        rgbs.push_back(a.rgb);
        disps.push_back(a.disparity);
        batch.labels.push_back(std::move(a.labels));
        batch.sources.push_back(a.source);
      }
      Tape tape;
      double loss_value = 0.0;
      {
        Tape::Scope scope(tape);
        ForwardTrace trace = forward(graph, stack_batch(rgbs), stack_batch(disps), Mode::kTrain);
        batch.logits = trace.logits;
        Tensor loss = multisource_loss(batch, taxonomy, loss_options);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
        }
        if (loss.requires_grad()) tape.backward(loss);
      }
      adam_step(params, result.optimizer, lr, config.weight_decay);
      graph.registry.zero_grad();
      loss_sum += loss_value;
      ++batches;
    }
    result.log.push_back({epoch, lr, loss_sum / batches});
  }
  return result;
}

std::string train_log_csv(const std::vector<EpochRecord>& log) {
  std::ostringstream os;
  os << "epoch,lr,loss\n";
  for (const auto& r : log) os << r.epoch << ',' << format_double(r.lr) << ',' << format_double(r.loss) << '\n';
  return os.str();
}

std::vector<EpochRecord> parse_train_log(const std::string& csv) {
  std::vector<EpochRecord> out;
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  if (line != "epoch,lr,loss") throw DataError("not a training log");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string e, lr, loss;
    if (!std::getline(ls, e, ',') || !std::getline(ls, lr, ',') || !std::getline(ls, loss)) {
      throw DataError("malformed training log line '" + line + "'");
    }
    out.push_back({parse_int(e), parse_double(lr), parse_double(loss)});
  }
  return out;
}

void write_train_outputs(const RunConfig& config, const TrainResult& result) {
  const fs::path out(config.out_dir);
  std::vector<EpochRecord> log;
  const int first = result.log.empty() ? config.epochs : result.log.front().epoch;
  if (first > 0 && fs::exists(out / outputs::kTrainLog)) {
    std::ifstream is(out / outputs::kTrainLog);
    std::ostringstream text;
    text << is.rdbuf();
    for (const auto& r : parse_train_log(text.str())) {
      if (r.epoch < first) log.push_back(r);
    }
  }
  log.insert(log.end(), result.log.begin(), result.log.end());
  KeyValues meta;
  meta.set("epochs_completed", std::to_string(log.empty() ? 0 : log.back().epoch + 1));
  meta.set("seed", std::to_string(config.seed));
  meta.set("masking", config.masking ? "true" : "false");
  meta.set("num_classes", std::to_string(config.model.num_classes));
  if (!config.taxonomy_path.empty()) meta.set("taxonomy", config.taxonomy_path);
  const std::string ckpt = encode_checkpoint(result.graph, meta, &result.optimizer);
  const std::string log_text = train_log_csv(log);
  io::write_file_atomic(out / outputs::kCheckpoint, ckpt);
  io::write_file_atomic(out / outputs::kTrainLog, log_text);
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult score_predictions(const std::vector<LabelMap>& predictions, const SplitData& split,
                             const RunConfig& config) {
  if (split.samples.empty()) throw DataError("evaluation split is empty");
  if (predictions.size() != split.samples.size()) {
    throw DataError("got " + std::to_string(predictions.size()) + " predictions for " +
                    std::to_string(split.samples.size()) + " samples");
  }
  const LabelTaxonomy scoring = eval_taxonomy(config);
  const LabelTaxonomy trained = train_taxonomy(config);
  EvalResult r;
  r.scored_classes = scoring.num_classes();
  r.obstacle_class = scoring.num_classes() - 1;
  for (const auto& c : scoring.classes) {
    if (c.name == "small_obstacle") r.obstacle_class = c.id;
  }
  for (const auto& c : trained.classes) r.class_names.push_back(c.name);
  const int k = trained.num_classes();
  r.confusion = ConfusionMatrix(k);
  DepthBinnedAccumulator binned(config.bins, k, scoring.ignore_id);
  for (std::size_t i = 0; i < split.samples.size(); ++i) {
    const Sample& s = split.samples[i];
    const LabelMap gt = remap_labels(s.labels, s.source, scoring);
    r.confusion.accumulate(predictions[i], gt, scoring.ignore_id);
    binned.accumulate(predictions[i], gt, depth_from_disparity(s.disparity, config.depth_scale));
    r.ids.push_back(split.entries[i].id);
  }
  r.predictions = predictions;
  r.report = iou(r.confusion, r.scored_classes);
  r.binned = binned.report(r.obstacle_class, r.scored_classes);
  return r;
}

EvalResult evaluate(NetworkGraph& graph, const SplitData& split, const RunConfig& config,
                    bool gt_as_prediction) {
  config.validate();
  if (split.samples.empty()) throw DataError("evaluation split is empty");
  const LabelTaxonomy scoring = eval_taxonomy(config);
  const int expected = train_taxonomy(config).num_classes();
  if (graph.config.num_classes != expected) {
    throw ConfigError("model predicts " + std::to_string(graph.config.num_classes) +
                      " classes, run configuration expects " + std::to_string(expected));
  }
  const auto prepared = prepare_split(split, scoring, config);
  std::vector<LabelMap> predictions;
  if (gt_as_prediction) {
    for (const auto& p : prepared) {
      LabelMap pred = p.sample.labels;
      for (auto& v : pred.data) {
        if (v == scoring.ignore_id) v = 0;
      }
      predictions.push_back(std::move(pred));
    }
  } else {
    const std::size_t step = static_cast<std::size_t>(config.eval_batch);
    for (std::size_t b = 0; b < prepared.size(); b += step) {
      const std::size_t end = std::min(prepared.size(), b + step);
      std::vector<Tensor> rgbs;
      std::vector<Tensor> disps;
      for (std::size_t i = b; i < end; ++i) {
        rgbs.push_back(prepared[i].sample.rgb);
        disps.push_back(prepared[i].sample.disparity);
      }
      ForwardTrace trace = forward(graph, stack_batch(rgbs), stack_batch(disps), Mode::kEval);
      for (std::size_t i = 0; i < end - b; ++i) {
        predictions.push_back(argmax_channels(select_batch(trace.logits, i)));
      }
    }
  }
  return score_predictions(predictions, split, config);
}

void write_eval_outputs(const fs::path& out_dir, const EvalResult& result, int ignore_id) {
  std::vector<std::pair<fs::path, std::string>> files;
  files.emplace_back(out_dir / outputs::kClassIou, class_iou_csv(result.class_names, result.report));
  const std::string tracked = result.obstacle_class < static_cast<int>(result.class_names.size())
                                  ? result.class_names[result.obstacle_class]
                                  : "tracked";
  files.emplace_back(out_dir / outputs::kBinnedIou, binned_iou_csv(result.binned, tracked));
  const fs::path pred_dir = out_dir / outputs::kPredictions;
  for (std::size_t i = 0; i < result.predictions.size(); ++i) {
    const LabelMap& p = result.predictions[i];
    Tensor t(Shape{1, p.height, p.width});
    for (std::size_t j = 0; j < p.size(); ++j) t.data()[j] = p.data[j];
    std::ostringstream os(std::ios::binary);
    write_tensor(os, t);
    files.emplace_back(pred_dir / (result.ids[i] + ".pred"), os.str());
    files.emplace_back(pred_dir / (result.ids[i] + ".ppm"), label_map_ppm(p, ignore_id));
  }
  for (const auto& [path, bytes] : files) io::write_file_atomic(path, bytes);
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationRow> ablate(const RunConfig& config, const SplitData& train_split,
                                const SplitData& val_split,
                                const std::vector<Variant>& variants) {
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    RunConfig c = config;
    c.model.variant = v;
    TrainResult trained = train(c, train_split);
    const EvalResult ev = evaluate(trained.graph, val_split, c);
    ModelConfig full = ModelConfig::full_preset(v);
    rows.push_back({v, trained.graph.parameter_count(), build(full, 0).parameter_count(),
                    ev.report.miou, ev.report.per_class[ev.obstacle_class]});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,params,params_full_preset,miou,obstacle_iou\n";
  for (const auto& r : rows) {
    os << variant_name(r.variant) << ',' << r.params << ',' << r.params_full_preset << ','
       << format_double(r.miou) << ',' << (r.obstacle_iou ? format_double(*r.obstacle_iou) : "")
       << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Diagnostics

GradCheckResult grad_check(const ModelConfig& model, std::uint64_t seed, int samples, double h,
                           int batch, double kink_tolerance) {
  model.validate();
  if (samples < 1) throw ConfigError("grad check needs at least one sample");
  if (batch < 1) throw ConfigError("grad check batch must be >= 1");
  NetworkGraph graph = build(model, stream_seed(seed, Stream::kInit));
  Rng rng(stream_seed(seed, Stream::kGradCheck));
  const auto n = static_cast<std::size_t>(batch);
  const auto hh = static_cast<std::size_t>(model.height);
  const auto ww = static_cast<std::size_t>(model.width);
  Tensor rgb(Shape{n, 3, hh, ww});
  Tensor depth(Shape{n, 1, hh, ww});
  for (double& v : rgb.data()) v = rng.uniform();
  for (double& v : depth.data()) v = rng.uniform();
  std::vector<LabelMap> labels;
  Tensor weights(Shape{hh, ww}, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    LabelMap l(hh, ww);
    for (auto& v : l.data) v = static_cast<std::int32_t>(rng.uniform_int(0, model.num_classes - 1));
    labels.push_back(std::move(l));
  }
  auto loss_fn = [&]() {
    ForwardTrace trace = forward(graph, rgb, depth, Mode::kTrain);
    Tensor total;
    for (std::size_t i = 0; i < n; ++i) {
      Tensor li = masked_softmax_cross_entropy(select_batch(trace.logits, i), labels[i], weights, -1);
      total = total.defined() ? add(total, li) : li;
    }
    return scale(total, 1.0 / static_cast<double>(n));
  };

  std::vector<const ParamEntry*> params;
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& e : graph.registry.entries()) {
    if (!e.trainable) continue;
    params.push_back(&e);
    offsets.push_back(total);
    total += e.tensor.numel();
  }
  {
    Tape tape;
    Tape::Scope scope(tape);
    tape.backward(loss_fn());
  }
  auto central = [&](Tensor& t, std::size_t idx, double step) {
    const double orig = t.data()[idx];
    t.data()[idx] = orig + step;
    const double up = loss_fn().item();
    t.data()[idx] = orig - step;
    const double down = loss_fn().item();
    t.data()[idx] = orig;
    return (up - down) / (2 * step);
  };
  auto rel_diff = [](double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
  };

  GradCheckResult result;
  const std::size_t wanted = std::min<std::size_t>(static_cast<std::size_t>(samples), total);
  std::set<std::size_t> drawn;
  while (result.entries.size() < wanted) {
    if (drawn.size() == total || static_cast<std::size_t>(result.skipped) > 4 * wanted) {
      throw NumericError("grad check: too many sampled parameters sit on a non-smooth point");
    }
    const auto flat = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(total) - 1));
    if (!drawn.insert(flat).second) continue;
    const std::size_t p =
        static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin()) - 1;
    const std::size_t idx = flat - offsets[p];
    Tensor t = params[p]->tensor;
    const double analytic = t.has_grad() ? t.grad()[idx] : 0.0;
    const double numeric = central(t, idx, h);
    const double numeric_half = central(t, idx, h / 2);
    if (rel_diff(numeric, numeric_half, 1e-4) > kink_tolerance) {
      ++result.skipped;
      continue;
    }
    const double rel = rel_diff(analytic, numeric, 1e-6);
    result.entries.push_back({params[p]->name, idx, analytic, numeric, rel});
    result.max_relative_error = std::max(result.max_relative_error, rel);
  }
  graph.registry.zero_grad();
  return result;
}

std::string grad_check_csv(const GradCheckResult& result) {
  std::ostringstream os;
  os << "parameter,index,analytic,numeric,relative_error\n";
  for (const auto& e : result.entries) {
    os << e.name << ',' << e.index << ',' << format_double(e.analytic) << ','
       << format_double(e.numeric) << ',' << format_double(e.relative_error) << '\n';
  }
  os << "max,,,," << format_double(result.max_relative_error) << '\n';
  os << "skipped_non_smooth,,,," << result.skipped << '\n';
  return os.str();
}

std::string param_count_csv(const NetworkGraph& graph) {
  std::ostringstream os;
  os << "group,count\n";
  os << "total," << graph.parameter_count() << '\n';
  os << "pretrained_eligible," << graph.registry.parameter_count(ParamGroup::kPretrainedEligible) << '\n';
  os << "fresh," << graph.registry.parameter_count(ParamGroup::kFresh) << '\n';
  return os.str();
}

void dump_features(NetworkGraph& graph, const SplitData& split, const RunConfig& config, int count,
                   const fs::path& out_dir) {
  if (!graph.depth) {
    throw ConfigError(std::string("dump-features needs a dual-branch variant, got ") +
                      std::string(variant_name(graph.config.variant)));
  }
  if (split.samples.empty()) throw DataError("feature dump split is empty");
  const auto prepared = prepare_split(split, eval_taxonomy(config), config);
  const std::size_t limit = std::min(prepared.size(), static_cast<std::size_t>(std::max(count, 0)));
  std::vector<std::pair<fs::path, std::string>> files;
  for (std::size_t i = 0; i < limit; ++i) {
    const auto& s = prepared[i].sample;
    ForwardTrace trace = forward(graph, stack_batch({s.rgb}), stack_batch({s.disparity}), Mode::kEval);
    const std::pair<const char*, Tensor> maps[] = {
        {"rgb", select_batch(trace.rgb_stages[1], 0)},
        {"depth", select_batch(trace.depth_stages[1], 0)},
        {"fused", select_batch(trace.fused[1], 0)}};
    for (const auto& [tag, map] : maps) {
      std::ostringstream os(std::ios::binary);
      write_tensor(os, map);
      const std::string stem = prepared[i].id + "_" + tag;
      files.emplace_back(out_dir / (stem + ".rft"), os.str());
      files.emplace_back(out_dir / (stem + ".ppm"), feature_grid_ppm(map));
    }
  }
  for (const auto& [path, bytes] : files) io::write_file_atomic(path, bytes);
}

}  // namespace rfnet
