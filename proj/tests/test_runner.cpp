#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "rfnet/checkpoint.hpp"
#include "rfnet/error.hpp"
#include "rfnet/optim.hpp"
#include "rfnet/runner.hpp"
#include "test_support.hpp"

using namespace rfnet;
using namespace rfnet::testing;

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

/// Tiny generated corpus shared by the tests in this file.
const fs::path& tiny_data() {
  static const fs::path root = [] {
    const fs::path r = temp_dir("rfnet_runner_tiny");
    SyntheticDatasetConfig g;
    g.seed = 4;
    g.train_samples = 6;
    g.val_samples = 3;
    g.height = 32;
    g.width = 32;
    generate_dataset(r, g);
    return r;
  }();
  return root;
}

RunConfig tiny_config(const std::string& out_name) {
  RunConfig c;
  c.model.height = 32;
  c.model.width = 32;
  c.model.spp_grids = {1};
  c.epochs = 3;
  c.batch = 4;
  c.eval_batch = 2;
  c.seed = 9;
  c.data_root = tiny_data().string();
  c.out_dir = temp_dir(out_name).string();
  return c;
}

std::vector<double> flat_params(const NetworkGraph& g) {
  std::vector<double> out;
  for (const auto& e : g.registry.entries()) {
    auto v = e.tensor.data();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

}  // namespace

TEST_SUITE("run config") {
  TEST_CASE("defaults follow the training protocol") {
    const RunConfig c;
    CHECK(c.lr == 4e-4);
    CHECK(c.min_lr == 1e-6);
    CHECK(c.weight_decay == 1e-4);
    CHECK(c.pretrained_multiplier == 0.25);
    CHECK(c.masking);
    CHECK_NOTHROW(c.validate());
  }

  TEST_CASE("serialize round trip") {
    RunConfig c = tiny_config("rfnet_runner_cfg");
    c.model.variant = Variant::kRgbdConcat;
    c.masking = false;
    c.bins = {10, 55.5, 100};
    c.lr = 2e-3;
    const RunConfig back = RunConfig::from_key_values(parse_key_values(c.serialize()));
    CHECK(back.serialize() == c.serialize());
    CHECK(back.model == c.model);
  }

  TEST_CASE("unknown and invalid keys") {
    CHECK_THROWS_AS(RunConfig::from_key_values(parse_key_values("lrr = 1\n")), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_key_values(parse_key_values("lr = 1e-7\n")), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_key_values(parse_key_values("batch = 0\n")), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_key_values(parse_key_values("bins = 10,50\n")), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_key_values(parse_key_values("seed = -3\n")), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_key_values(parse_key_values("variant = rgbd\n")), ConfigError);
  }

  TEST_CASE("naive mode adds a background class to the network") {
    RunConfig c;
    CHECK(network_config(c).num_classes == 5);
    c.masking = false;
    CHECK(network_config(c).num_classes == 6);
    CHECK(eval_taxonomy(c).num_classes() == 5);
  }

  TEST_CASE("streams are distinct") {
    std::set<std::uint64_t> seen;
    for (auto s : {Stream::kInit, Stream::kShuffle, Stream::kAugment, Stream::kGradCheck})
      for (std::uint64_t i = 0; i < 4; ++i) seen.insert(stream_seed(1, s, i));
    CHECK(seen.size() == 16);
  }
}

TEST_SUITE("optimizer groups") {
  TEST_CASE("pretrained groups get a quarter of lr and weight decay") {
    const RunConfig c;
    const NetworkGraph g = build(network_config(c), 1);
    const OptimizerState st = make_run_optimizer(g, c);
    const auto groups = g.registry.trainable_groups();
    int pretrained = 0;
    int fresh = 0;
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const auto r = effective_rates(st, i, c.lr, c.weight_decay);
      if (groups[i] == ParamGroup::kPretrainedEligible) {
        CHECK(r.lr == 1e-4);
        CHECK(r.weight_decay == 2.5e-5);
        ++pretrained;
      } else {
        CHECK(r.lr == c.lr);
        CHECK(r.weight_decay == c.weight_decay);
        ++fresh;
      }
    }
    CHECK(pretrained > 0);
    CHECK(fresh > 0);
  }

  TEST_CASE("pretrained step matches a reference with the reduced rates") {
    const RunConfig c;
    NetworkGraph g = build(network_config(c), 2);
    OptimizerState st = make_run_optimizer(g, c);
    auto params = g.registry.trainable();
    const auto groups = g.registry.trainable_groups();
    std::vector<std::vector<double>> before;
    Rng rng(3);
    for (auto& p : params) {
      before.push_back(values(p));
      for (double& v : p.grad_mut()) v = rng.uniform(-1, 1);
    }
    adam_step(params, st, c.lr, c.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double m = groups[i] == ParamGroup::kPretrainedEligible ? 0.25 : 1.0;
      const double lr = c.lr * m;
      const double wd = c.weight_decay * m;
      for (std::size_t j = 0; j < before[i].size(); j += 97) {
        const double grad = params[i].grad()[j];
        double p = before[i][j];
        p -= lr * wd * p;
        const double mh = 0.1 * grad / 0.1;
        const double vh = 0.001 * grad * grad / 0.001;
        p -= lr * mh / (std::sqrt(vh) + 1e-8);
        CHECK(params[i].data()[j] == doctest::Approx(p).epsilon(1e-12));
      }
    }
  }
}

TEST_SUITE("training") {
  TEST_CASE("schedule endpoints in the log") {
    RunConfig c = tiny_config("rfnet_runner_sched");
    const TrainResult r = train(c, load_split(tiny_data(), "train"));
    REQUIRE(r.log.size() == 3);
    CHECK(r.log.front().lr == 4e-4);
    CHECK(r.log.back().lr == 1e-6);
    for (std::size_t e = 0; e < r.log.size(); ++e) CHECK(r.log[e].epoch == static_cast<int>(e));
  }

  TEST_CASE("single epoch run logs the base rate") {
    RunConfig c = tiny_config("rfnet_runner_one");
    c.epochs = 1;
    const TrainResult r = train(c, load_split(tiny_data(), "train"));
    REQUIRE(r.log.size() == 1);
    CHECK(r.log[0].lr == 4e-4);
  }

  TEST_CASE("empty splits are rejected") {
    const RunConfig c = tiny_config("rfnet_runner_empty");
    CHECK_THROWS_AS(train(c, SplitData{}), DataError);
    NetworkGraph g = build(network_config(c), 1);
    CHECK_THROWS_AS(evaluate(g, SplitData{}, c), DataError);
    CHECK_THROWS_AS(score_predictions({}, SplitData{}, c), DataError);
  }

  TEST_CASE("prediction count must match the split") {
    const RunConfig c = tiny_config("rfnet_runner_count");
    const SplitData val = load_split(tiny_data(), "val");
    CHECK_THROWS_AS(score_predictions({LabelMap(32, 32)}, val, c), DataError);
  }

  TEST_CASE("ground truth scored against itself gives mIoU 1") {
    const RunConfig c = tiny_config("rfnet_runner_gt");
    NetworkGraph g = build(network_config(c), 1);
    const EvalResult r = evaluate(g, load_split(tiny_data(), "val"), c, true);
    CHECK(r.report.miou == 1.0);
    for (const auto& v : r.report.per_class)
      if (v) CHECK(*v == 1.0);
    for (const auto& rep : r.binned.reports)
      if (rep.defined > 0) CHECK(rep.miou == 1.0);
  }

  TEST_CASE("model class count must match the run") {
    RunConfig c = tiny_config("rfnet_runner_mismatch");
    NetworkGraph g = build(network_config(c), 1);
    c.masking = false;
    CHECK_THROWS_AS(evaluate(g, load_split(tiny_data(), "val"), c), ConfigError);
  }

  TEST_CASE("resume reproduces the uninterrupted run") {
    const SplitData data = load_split(tiny_data(), "train");
    RunConfig full = tiny_config("rfnet_runner_full");
    full.epochs = 4;
    const TrainResult a = train(full, data);

    RunConfig part = tiny_config("rfnet_runner_part");
    part.epochs = 2;
    const TrainResult first = train(part, data);
    // the partial run uses its own schedule; write it under the full run's length
    RunConfig head = full;
    head.out_dir = part.out_dir;
    write_train_outputs(head, first);
    const Checkpoint ckpt = load_checkpoint(fs::path(head.out_dir) / outputs::kCheckpoint);
    CHECK(ckpt.meta.get("epochs_completed") == "2");

    RunConfig tail_cfg = full;
    tail_cfg.out_dir = part.out_dir;
    const TrainResult tail = train(tail_cfg, data, &ckpt);
    REQUIRE(tail.log.size() == 2);
    CHECK(tail.log[0].epoch == 2);
    CHECK(tail.log[0].lr == a.log[2].lr);
    CHECK(tail.log[1].lr == a.log[3].lr);
    CHECK(tail.log[1].lr == 1e-6);
  }

  TEST_CASE("loss falls to zero on a single-class task") {
    SplitData split;
    for (int i = 0; i < 32; ++i) {
      Sample s;
      s.source = "cityscapes_like";
      s.rgb = Tensor(Shape{3, 32, 32});
      s.disparity = Tensor(Shape{1, 32, 32});
      Rng rng(static_cast<std::uint64_t>(i));
      for (double& v : s.rgb.data()) v = rng.uniform();
      for (double& v : s.disparity.data()) v = rng.uniform(1, 40);
      s.labels = LabelMap(32, 32, 0);
      split.entries.push_back({"s" + std::to_string(i), s.source});
      split.samples.push_back(std::move(s));
    }
    RunConfig c = tiny_config("rfnet_runner_degenerate");
    c.epochs = 20;
    c.batch = 2;
    c.lr = 2e-3;
    c.augment = false;
    const TrainResult r = train(c, split);
    REQUIRE(r.log.size() == 20);
    // epoch means over shuffled batches jitter once the rate is near its floor
    for (std::size_t e = 1; e < r.log.size(); ++e) CHECK(r.log[e].loss < r.log[e - 1].loss + 1e-3);
    CHECK(r.log.back().loss < 0.05);
  }
}

TEST_SUITE("determinism") {
  TEST_CASE("identical runs write identical files") {
    std::vector<std::map<std::string, std::string>> runs;
    for (int run = 0; run < 2; ++run) {
      RunConfig c = tiny_config("rfnet_runner_det" + std::to_string(run));
      const TrainResult r = train(c, load_split(tiny_data(), "train"));
      write_train_outputs(c, r);
      const Checkpoint ckpt = load_checkpoint(fs::path(c.out_dir) / outputs::kCheckpoint);
      NetworkGraph g = build(ckpt.config, 0);
      restore_graph(ckpt, g);
      const EvalResult ev = evaluate(g, load_split(tiny_data(), "val"), c);
      write_eval_outputs(c.out_dir, ev, eval_taxonomy(c).ignore_id);
      std::map<std::string, std::string> files;
      for (const auto& entry : fs::recursive_directory_iterator(c.out_dir)) {
        if (entry.is_regular_file()) {
          files[fs::relative(entry.path(), c.out_dir).string()] = slurp(entry.path());
        }
      }
      runs.push_back(std::move(files));
    }
    CHECK(runs[0].count(outputs::kTrainLog));
    CHECK(runs[0].count(outputs::kCheckpoint));
    CHECK(runs[0].count(outputs::kClassIou));
    CHECK(runs[0].count(outputs::kBinnedIou));
    CHECK(runs[0].size() > 4);
    CHECK(runs[0] == runs[1]);
  }

  TEST_CASE("different seeds give different weights") {
    RunConfig a = tiny_config("rfnet_runner_seed_a");
    a.epochs = 1;
    RunConfig b = a;
    b.seed = 10;
    const SplitData data = load_split(tiny_data(), "train");
    CHECK(flat_params(train(a, data).graph) != flat_params(train(b, data).graph));
  }
}

TEST_SUITE("reports") {
  TEST_CASE("train log csv round trip") {
    const std::vector<EpochRecord> log{{0, 4e-4, 1.25}, {1, 1e-6, 0.1 + 0.2}};
    const auto back = parse_train_log(train_log_csv(log));
    REQUIRE(back.size() == 2);
    CHECK(back[1].lr == 1e-6);
    CHECK(back[1].loss == 0.1 + 0.2);
    CHECK_THROWS_AS(parse_train_log("epoch,loss\n"), DataError);
    CHECK_THROWS_AS(parse_train_log("epoch,lr,loss\n1,2\n"), DataError);
  }

  TEST_CASE("ablation csv") {
    const std::vector<AblationRow> rows{{Variant::kRfnet, 10, 20, 0.5, 0.25},
                                        {Variant::kSingleRgb, 5, 8, 0.75, std::nullopt}};
    CHECK(ablation_csv(rows) ==
          "variant,params,params_full_preset,miou,obstacle_iou\n"
          "rfnet,10,20,0.5,0.25\nsingle_rgb,5,8,0.75,\n");
  }

  TEST_CASE("grad check csv records skipped draws") {
    GradCheckResult r;
    r.entries.push_back({"w", 3, 1.0, 1.0, 0.0});
    r.skipped = 2;
    const std::string csv = grad_check_csv(r);
    CHECK(csv.find("w,3,1,1,0\n") != std::string::npos);
    CHECK(csv.find("skipped_non_smooth,,,,2\n") != std::string::npos);
  }
}
