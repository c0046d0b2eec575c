#include "rfnet/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "rfnet/error.hpp"

namespace rfnet {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : k_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 0) throw ContractError("negative class count");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(int gt) const {
  std::uint64_t t = 0;
  for (int p = 0; p < k_; ++p) t += at(gt, p);
  return t;
}

std::uint64_t ConfusionMatrix::col_sum(int pred) const {
  std::uint64_t t = 0;
  for (int g = 0; g < k_; ++g) t += at(g, pred);
  return t;
}

void ConfusionMatrix::add(int gt, int pred, std::uint64_t count) {
  if (gt < 0 || gt >= k_) throw DataError("ground-truth id " + std::to_string(gt) + " out of range");
  if (pred < 0 || pred >= k_) throw DataError("prediction id " + std::to_string(pred) + " out of range");
  counts_[gt * k_ + pred] += count;
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt, int ignore_id) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("prediction and ground truth differ in size");
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.data[i] == ignore_id) continue;
    add(gt.data[i], pred.data[i]);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("cannot merge confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

IouReport iou(const ConfusionMatrix& cm, int scored_classes) {
  const int k = cm.num_classes();
  const int scored = scored_classes < 0 ? k : std::min(scored_classes, k);
  IouReport r;
  r.per_class.resize(static_cast<std::size_t>(k));
  double total = 0.0;
  for (int c = 0; c < k; ++c) {
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t denom = cm.row_sum(c) + cm.col_sum(c) - tp;
    if (denom == 0) continue;
    const double v = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class[c] = v;
    if (c < scored) {
      total += v;
      ++r.defined;
    }
  }
  r.miou = r.defined > 0 ? total / r.defined : std::numeric_limits<double>::quiet_NaN();
  return r;
}

Tensor depth_from_disparity(const Tensor& disparity, double scale_const, double max_depth) {
  if (!(scale_const > 0)) throw ConfigError("depth scale constant must be positive");
  Tensor out(disparity.dims());
  auto src = disparity.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double d = src[i];
    if (d < 0 || !std::isfinite(d)) throw DataError("disparity must be finite and >= 0");
    dst[i] = d == 0.0 ? max_depth : std::min(max_depth, scale_const / d);
  }
  return out;
}

DepthBinnedAccumulator::DepthBinnedAccumulator(std::vector<double> edges, int num_classes,
                                               int ignore_id, double max_depth)
    : edges_(std::move(edges)), ignore_id_(ignore_id) {
  if (edges_.empty()) throw ConfigError("depth bins need at least one edge");
  double prev = 0.0;
  for (double e : edges_) {
    if (!(e > prev)) throw ConfigError("depth bin edges must be positive and strictly increasing");
    prev = e;
  }
  if (edges_.back() != max_depth) {
    throw ConfigError("last depth bin edge must equal " + format_double(max_depth));
  }
  bins_.assign(edges_.size(), ConfusionMatrix(num_classes));
}

void DepthBinnedAccumulator::accumulate(const LabelMap& pred, const LabelMap& gt,
                                        const Tensor& depth) {
  if (pred.height != gt.height || pred.width != gt.width || depth.numel() != gt.size()) {
    throw ShapeError("prediction, ground truth and depth differ in size");
  }
  auto d = depth.data();
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.data[i] == ignore_id_) continue;
    const double z = d[i];
    if (!(z > 0.0) || z > edges_.back()) {
      throw DataError("depth " + format_double(z) + " outside (0, " + format_double(edges_.back()) + "]");
    }
    const auto bin = static_cast<std::size_t>(
        std::lower_bound(edges_.begin(), edges_.end(), z) - edges_.begin());
    bins_[bin].add(gt.data[i], pred.data[i]);
  }
}

DepthBinnedReport DepthBinnedAccumulator::report(int tracked_class, int scored_classes) const {
  DepthBinnedReport r;
  r.edges = edges_;
  r.bins = bins_;
  for (const auto& cm : bins_) {
    r.reports.push_back(iou(cm, scored_classes));
    if (tracked_class >= 0 && tracked_class < cm.num_classes()) {
      r.tracked_iou.push_back(r.reports.back().per_class[tracked_class]);
    } else {
      r.tracked_iou.emplace_back();
    }
  }
  return r;
}

ConfusionMatrix DepthBinnedAccumulator::total() const {
  ConfusionMatrix t(bins_.front().num_classes());
  for (const auto& cm : bins_) t.merge(cm);
  return t;
}

DepthBinnedReport binned_eval(const LabelMap& pred, const LabelMap& gt, const Tensor& depth,
                              const std::vector<double>& edges, int num_classes, int ignore_id,
                              int tracked_class) {
  DepthBinnedAccumulator acc(edges, num_classes, ignore_id);
  acc.accumulate(pred, gt, depth);
  return acc.report(tracked_class);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

namespace {
std::string optional_value(const std::optional<double>& v) { return v ? format_double(*v) : ""; }
}  // namespace

std::string class_iou_csv(const std::vector<std::string>& class_names, const IouReport& report) {
  std::ostringstream os;
  os << "class,iou\n";
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const std::string name = c < class_names.size() ? class_names[c] : "class" + std::to_string(c);
    os << name << ',' << optional_value(report.per_class[c]) << '\n';
  }
  os << "mIoU," << (report.defined > 0 ? format_double(report.miou) : "") << '\n';
  return os.str();
}

std::string binned_iou_csv(const DepthBinnedReport& report, const std::string& tracked_name) {
  std::ostringstream os;
  os << "bin_low,bin_high,pixels,miou," << tracked_name << "_iou\n";
  for (std::size_t b = 0; b < report.bins.size(); ++b) {
    const double lo = b == 0 ? 0.0 : report.edges[b - 1];
    os << format_double(lo) << ',' << format_double(report.edges[b]) << ','
       << report.bins[b].total() << ','
       << (report.reports[b].defined > 0 ? format_double(report.reports[b].miou) : "") << ','
       << optional_value(report.tracked_iou[b]) << '\n';
  }
  return os.str();
}

std::array<std::uint8_t, 3> palette_color(int class_id, int ignore_id) {
  static const std::array<std::array<std::uint8_t, 3>, 20> kPalette{{
      {128, 64, 128}, {70, 130, 180}, {70, 70, 70},   {0, 0, 142},     {220, 20, 60},
      {244, 35, 232}, {102, 102, 156}, {190, 153, 153}, {153, 153, 153}, {250, 170, 30},
      {220, 220, 0},  {107, 142, 35}, {152, 251, 152}, {255, 0, 0},     {0, 0, 70},
      {0, 60, 100},   {0, 80, 100},   {0, 0, 230},    {119, 11, 32},   {255, 255, 255},
  }};
  if (class_id == ignore_id || class_id < 0) return {0, 0, 0};
  return kPalette[static_cast<std::size_t>(class_id) % kPalette.size()];
}

std::string label_map_ppm(const LabelMap& labels, int ignore_id) {
  std::string out = "P6\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) + "\n255\n";
  out.reserve(out.size() + labels.size() * 3);
  for (auto id : labels.data) {
    const auto c = palette_color(id, ignore_id);
    out.append(reinterpret_cast<const char*>(c.data()), 3);
  }
  return out;
}

std::string feature_grid_ppm(const Tensor& features) {
  if (features.rank() != 3) {
    throw ShapeError("feature grid expects [C,H,W], got " + shape_to_string(features.dims()));
  }
  const std::size_t c = features.dim(0);
  const std::size_t h = features.dim(1);
  const std::size_t w = features.dim(2);
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(c))));
  const std::size_t rows = (c + cols - 1) / cols;
  const std::size_t gw = cols * (w + 1) - 1;
  const std::size_t gh = rows * (h + 1) - 1;
  std::vector<std::uint8_t> gray(gw * gh, 0);
  auto v = features.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const auto plane = v.subspan(ch * h * w, h * w);
    const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
    const double range = *hi - *lo;
    const std::size_t oy = (ch / cols) * (h + 1);
    const std::size_t ox = (ch % cols) * (w + 1);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double n = range > 0 ? (plane[y * w + x] - *lo) / range : 0.0;
        gray[(oy + y) * gw + ox + x] = static_cast<std::uint8_t>(std::lround(n * 255.0));
      }
    }
  }
  std::string out = "P6\n" + std::to_string(gw) + " " + std::to_string(gh) + "\n255\n";
  for (auto g : gray) out.append(3, static_cast<char>(g));
  return out;
}

}  // namespace rfnet
