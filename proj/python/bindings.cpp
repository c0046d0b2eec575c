#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rfnet/checkpoint.hpp"
#include "rfnet/error.hpp"
#include "rfnet/loss.hpp"
#include "rfnet/metrics.hpp"
#include "rfnet/optim.hpp"
#include "rfnet/runner.hpp"
#include "rfnet/synth.hpp"

namespace py = pybind11;
using namespace rfnet;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const DoubleArray& a, bool requires_grad = false) {
  Shape dims(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(dims), std::vector<double>(a.data(), a.data() + a.size()), requires_grad);
}

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> dims(t.dims().begin(), t.dims().end());
  py::array_t<double> out(dims);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::array_t<double> grad_to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> dims(t.dims().begin(), t.dims().end());
  py::array_t<double> out(dims);
  if (t.has_grad()) {
    std::copy(t.grad().begin(), t.grad().end(), out.mutable_data());
  } else {
    std::fill(out.mutable_data(), out.mutable_data() + out.size(), 0.0);
  }
  return out;
}

LabelMap to_label_map(const IntArray& a) {
  if (a.ndim() != 2) throw ShapeError("label map must be 2-D");
  LabelMap m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

py::array_t<std::int32_t> label_map_to_numpy(const LabelMap& m) {
  py::array_t<std::int32_t> out({static_cast<py::ssize_t>(m.height), static_cast<py::ssize_t>(m.width)});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

py::object optional_to_py(const std::optional<double>& v) {
  return v ? py::cast(*v) : py::none();
}

py::dict report_to_dict(const IouReport& r) {
  py::list per_class;
  for (const auto& v : r.per_class) per_class.append(optional_to_py(v));
  py::dict d;
  d["per_class"] = per_class;
  d["miou"] = r.miou;
  d["defined"] = r.defined;
  return d;
}

ConfusionMatrix confusion_of(const IntArray& pred, const IntArray& gt, int num_classes, int ignore_id) {
  ConfusionMatrix cm(num_classes);
  cm.accumulate(to_label_map(pred), to_label_map(gt), ignore_id);
  return cm;
}

py::array_t<std::uint64_t> confusion_to_numpy(const ConfusionMatrix& cm) {
  const auto k = static_cast<py::ssize_t>(cm.num_classes());
  py::array_t<std::uint64_t> out({k, k});
  auto m = out.mutable_unchecked<2>();
  for (int g = 0; g < k; ++g)
    for (int p = 0; p < k; ++p) m(g, p) = cm.at(g, p);
  return out;
}

ConfusionMatrix confusion_from_numpy(const py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(0) != a.shape(1)) throw ShapeError("confusion matrix must be square");
  ConfusionMatrix cm(static_cast<int>(a.shape(0)));
  auto m = a.unchecked<2>();
  for (py::ssize_t g = 0; g < a.shape(0); ++g)
    for (py::ssize_t p = 0; p < a.shape(1); ++p) cm.add(static_cast<int>(g), static_cast<int>(p), m(g, p));
  return cm;
}

RunConfig config_from_dict(const py::dict& d) {
  KeyValues kv;
  for (const auto& [k, v] : d) {
    std::string value;
    if (py::isinstance<py::bool_>(v)) {
      value = v.cast<bool>() ? "true" : "false";
    } else if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
      for (const auto& item : v) value += (value.empty() ? "" : ",") + py::str(item).cast<std::string>();
    } else {
      value = py::str(v).cast<std::string>();
    }
    kv.set(py::str(k).cast<std::string>(), value);
  }
  return RunConfig::from_key_values(kv);
}

py::list log_to_list(const std::vector<EpochRecord>& log) {
  py::list out;
  for (const auto& r : log) out.append(py::make_tuple(r.epoch, r.lr, r.loss));
  return out;
}

}  // namespace

PYBIND11_MODULE(_rfnet, m) {
  m.doc() = "RGB-D road segmentation: fusion network, multi-dataset loss, metrics";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def("variants", [] {
    std::vector<std::string> out;
    for (Variant v : all_variants()) out.emplace_back(variant_name(v));
    return out;
  });

  m.def(
      "parameter_count",
      [](const std::string& variant, const std::string& preset, int num_classes) {
        const Variant v = parse_variant(variant);
        ModelConfig c;
        if (preset == "full") {
          c = ModelConfig::full_preset(v);
        } else if (preset == "toy") {
          c = ModelConfig::toy_preset(v, num_classes);
        } else {
          throw ConfigError("unknown preset '" + preset + "' (toy|full)");
        }
        return build(c, 0).parameter_count();
      },
      py::arg("variant"), py::arg("preset") = "full", py::arg("num_classes") = 5);

  m.def("cosine_lr", &cosine_lr, py::arg("epoch"), py::arg("total_epochs"), py::arg("lr_max") = 4e-4,
        py::arg("lr_min") = 1e-6);

  m.def(
      "multisource_loss",
      [](const DoubleArray& logits, const std::vector<IntArray>& labels, const std::vector<std::string>& sources,
         bool masking) {
        const int k = static_cast<int>(logits.ndim() == 4 ? logits.shape(1) : 0);
        if (k < 3) throw ShapeError("logits must be [N,K,H,W] with K >= 3");
        LossBatch b;
        b.logits = to_tensor(logits, true);
        for (const auto& l : labels) b.labels.push_back(to_label_map(l));
        b.sources = sources;
        const LabelTaxonomy tax = LabelTaxonomy::synthetic(masking ? k : k - 1, !masking);
        double value = 0.0;
        {
          Tape tape;
          Tape::Scope scope(tape);
          Tensor loss = multisource_loss(b, tax, LossOptions{masking});
          value = loss.item();
          if (loss.requires_grad()) tape.backward(loss);
        }
        return py::make_tuple(value, grad_to_numpy(b.logits));
      },
      py::arg("logits"), py::arg("labels"), py::arg("sources"), py::arg("masking") = true,
      "Loss and logit gradient under the synthetic taxonomy (K classes, or K-1 plus background when "
      "masking is off).");

  m.def(
      "remap_labels",
      [](const IntArray& raw, const std::string& source, int num_classes, bool masking) {
        const LabelTaxonomy tax = LabelTaxonomy::synthetic(num_classes, !masking);
        return label_map_to_numpy(remap_labels(to_label_map(raw), source, tax));
      },
      py::arg("raw"), py::arg("source"), py::arg("num_classes") = 5, py::arg("masking") = true);

  m.def(
      "confusion",
      [](const IntArray& pred, const IntArray& gt, int num_classes, int ignore_id) {
        return confusion_to_numpy(confusion_of(pred, gt, num_classes, ignore_id));
      },
      py::arg("pred"), py::arg("gt"), py::arg("num_classes"), py::arg("ignore_id") = 255);

  m.def(
      "iou",
      [](const py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>& cm, int scored) {
        return report_to_dict(iou(confusion_from_numpy(cm), scored));
      },
      py::arg("confusion"), py::arg("scored_classes") = -1);

  m.def(
      "depth_from_disparity",
      [](const DoubleArray& d, double scale_const, double max_depth) {
        return to_numpy(depth_from_disparity(to_tensor(d), scale_const, max_depth));
      },
      py::arg("disparity"), py::arg("scale_const"), py::arg("max_depth") = 100.0);

  m.def(
      "binned_iou",
      [](const IntArray& pred, const IntArray& gt, const DoubleArray& depth, const std::vector<double>& edges,
         int num_classes, int ignore_id, int tracked_class) {
        const auto rep = binned_eval(to_label_map(pred), to_label_map(gt), to_tensor(depth), edges, num_classes,
                                     ignore_id, tracked_class);
        py::list bins;
        for (std::size_t b = 0; b < rep.bins.size(); ++b) {
          py::dict d = report_to_dict(rep.reports[b]);
          d["low"] = b == 0 ? 0.0 : rep.edges[b - 1];
          d["high"] = rep.edges[b];
          d["confusion"] = confusion_to_numpy(rep.bins[b]);
          d["tracked_iou"] = optional_to_py(rep.tracked_iou[b]);
          bins.append(d);
        }
        return bins;
      },
      py::arg("pred"), py::arg("gt"), py::arg("depth"), py::arg("edges") = std::vector<double>{20, 40, 60, 80, 100},
      py::arg("num_classes"), py::arg("ignore_id") = 255, py::arg("tracked_class") = -1);

  m.def(
      "generate_scene",
      [](std::uint64_t seed, const std::string& analog, int height, int width, int num_obstacles) {
        SceneSpec spec;
        spec.seed = seed;
        spec.height = height;
        spec.width = width;
        spec.num_obstacles = num_obstacles;
        DatasetAnalog a;
        if (analog == "cityscapes_like") {
          a = DatasetAnalog::kCityscapesLike;
        } else if (analog == "lostfound_like") {
          a = DatasetAnalog::kLostfoundLike;
        } else {
          throw ConfigError("unknown dataset analog '" + analog + "'");
        }
        const Sample s = generate(spec, a);
        py::dict d;
        d["rgb"] = to_numpy(s.rgb);
        d["disparity"] = to_numpy(s.disparity);
        d["labels"] = label_map_to_numpy(s.labels);
        d["source"] = s.source;
        return d;
      },
      py::arg("seed"), py::arg("analog") = "lostfound_like", py::arg("height") = 64, py::arg("width") = 64,
      py::arg("num_obstacles") = 2);

  m.def(
      "generate_dataset",
      [](const std::filesystem::path& root, int train, int val, std::uint64_t seed, int height, int width) {
        SyntheticDatasetConfig c;
        c.train_samples = train;
        c.val_samples = val;
        c.seed = seed;
        c.height = height;
        c.width = width;
        generate_dataset(root, c);
      },
      py::arg("root"), py::arg("train") = 200, py::arg("val") = 50, py::arg("seed") = 1, py::arg("height") = 64,
      py::arg("width") = 64);

  m.def(
      "train",
      [](const py::dict& config) {
        const RunConfig c = config_from_dict(config);
        if (c.data_root.empty()) throw ConfigError("config needs data_root");
        const SplitData data = load_split(c.data_root, "train");
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(c, data);
        }
        write_train_outputs(c, r);
        return log_to_list(r.log);
      },
      py::arg("config"),
      "Trains with run-config keys given as a dict; writes train_log.csv and checkpoint.rfc under `out`. "
      "Returns [(epoch, lr, loss)].");

  m.def(
      "evaluate",
      [](const py::dict& config, const std::filesystem::path& checkpoint, const std::string& split) {
        const RunConfig c = config_from_dict(config);
        if (c.data_root.empty()) throw ConfigError("config needs data_root");
        const Checkpoint ckpt = load_checkpoint(checkpoint);
        NetworkGraph graph = build(ckpt.config, 0);
        restore_graph(ckpt, graph);
        const SplitData data = load_split(c.data_root, split);
        const EvalResult r = evaluate(graph, data, c);
        py::dict d = report_to_dict(r.report);
        d["class_names"] = r.class_names;
        d["obstacle_class"] = r.obstacle_class;
        return d;
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("split") = "val");

  m.def(
      "grad_check",
      [](const std::string& variant, std::uint64_t seed, int samples, int size) {
        ModelConfig mc = ModelConfig::toy_preset(parse_variant(variant), 5);
        mc.height = size;
        mc.width = size;
        if (mc.spp_grids.back() > size / 32) mc.spp_grids = {1};
        const GradCheckResult r = grad_check(mc, seed, samples);
        py::dict d;
        d["max_relative_error"] = r.max_relative_error;
        d["skipped"] = r.skipped;
        d["checked"] = r.entries.size();
        return d;
      },
      py::arg("variant") = "rfnet", py::arg("seed") = 1, py::arg("samples") = 50, py::arg("size") = 32);
}
