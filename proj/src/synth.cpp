#include "rfnet/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rfnet/error.hpp"
#include "rfnet/ops.hpp"
#include "rfnet/tensor_io.hpp"

namespace rfnet {

namespace fs = std::filesystem;

std::string analog_id(DatasetAnalog analog) {
  return analog == DatasetAnalog::kCityscapesLike ? "cityscapes_like" : "lostfound_like";
}

DatasetAnalog parse_analog(const std::string& id) {
  if (id == "cityscapes_like") return DatasetAnalog::kCityscapesLike;
  if (id == "lostfound_like") return DatasetAnalog::kLostfoundLike;
  throw DataError("unknown dataset analog '" + id + "'");
}

void SceneSpec::validate() const {
  if (height < 16 || width < 16) throw ConfigError("scene must be at least 16x16");
  if (num_classes < 4) throw ConfigError("scene needs at least 4 classes");
  if (obstacle_min < 2 || obstacle_max < obstacle_min) {
    throw ConfigError("obstacle size range must satisfy 2 <= min <= max");
  }
  if (obstacle_max > height / 3 || obstacle_max > width / 2) {
    throw ConfigError("obstacle size range too large for the scene");
  }
  if (num_obstacles < 0 || num_markings < 0 || num_objects < 0) {
    throw ConfigError("scene element counts must be non-negative");
  }
  if (!(obstacle_lift > 1.0)) throw ConfigError("obstacle_lift must exceed one road step");
  if (!(max_road_disparity > 0)) throw ConfigError("max_road_disparity must be positive");
  if (unmatched_fraction < 0 || unmatched_fraction >= 1) {
    throw ConfigError("unmatched_fraction must lie in [0,1)");
  }
}

double SceneLayout::road_disparity(int row) const {
  return road_step * static_cast<double>(row - horizon + 1);
}

namespace {

using Color = std::array<double, 3>;

struct Canvas {
  int h;
  int w;
  std::vector<Color> rgb;
  std::vector<double> disp;
  std::vector<int> label;  // unified-style semantic id, mapped to raw ids at the end

  Canvas(int h_, int w_) : h(h_), w(w_), rgb(h_ * w_), disp(h_ * w_, 0.0), label(h_ * w_, 0) {}

  void paint(const Rect& r, const Color& c, int id, double d, bool set_disp) {
    for (int y = std::max(0, r.top); y < std::min(h, r.top + r.height); ++y) {
      for (int x = std::max(0, r.left); x < std::min(w, r.left + r.width); ++x) {
        const int i = y * w + x;
        rgb[i] = c;
        label[i] = id;
        if (set_disp) disp[i] = d;
      }
    }
  }
};

Color obstacle_color(Rng& rng) {
  return {rng.uniform(0.55, 1.0), rng.uniform(0.45, 1.0), rng.uniform(0.1, 0.9)};
}

Color object_color(int object_index, Rng& rng) {
  static const Color kBase[] = {
      {0.12, 0.16, 0.42}, {0.55, 0.12, 0.15}, {0.25, 0.25, 0.25}, {0.15, 0.42, 0.15}, {0.45, 0.2, 0.5}};
  const Color base = kBase[object_index % 5];
  const double j = 0.06;
  return {base[0] + rng.uniform(-j, j), base[1] + rng.uniform(-j, j), base[2] + rng.uniform(-j, j)};
}

Rect clip(Rect r, int h, int w) {
  const int top = std::max(0, r.top);
  const int left = std::max(0, r.left);
  const int bottom = std::min(h, r.top + r.height);
  const int right = std::min(w, r.left + r.width);
  return Rect{top, left, bottom - top, right - left};
}

enum Semantic { kRoad = 0, kSky = 1, kBuilding = 2 };

}  // namespace

Sample generate(const SceneSpec& spec, DatasetAnalog analog, SceneLayout* layout_out) {
  spec.validate();
  const int h = spec.height;
  const int w = spec.width;
  const int obstacle_id = spec.num_classes - 1;
  const int num_object_classes = spec.num_classes - 4;
  Rng rng(spec.seed);
  Canvas canvas(h, w);
  SceneLayout layout;

  layout.horizon = static_cast<int>(std::lround(h * rng.uniform(0.35, 0.45)));
  layout.road_step = spec.max_road_disparity / static_cast<double>(h - layout.horizon);

  const Color sky{0.55 + rng.uniform(-0.05, 0.05), 0.7 + rng.uniform(-0.05, 0.05),
                  0.92 + rng.uniform(-0.05, 0.05)};
  canvas.paint(Rect{0, 0, layout.horizon, w}, sky, kSky, 0.0, true);

  for (int x = 0; x < w;) {
    const int seg = static_cast<int>(rng.uniform_int(6, 16));
    const int tall = static_cast<int>(rng.uniform_int(h / 10, (3 * h) / 10));
    const double r = rng.uniform(0.4, 0.6);
    const Color c{r, r * 0.85, r * 0.7};
    canvas.paint(Rect{layout.horizon - tall, x, tall, seg}, c, kBuilding, rng.uniform(0.8, 1.6),
                 true);
    x += seg;
  }

  const double gray = rng.uniform(0.33, 0.45);
  for (int y = layout.horizon; y < h; ++y) {
    canvas.paint(Rect{y, 0, 1, w}, Color{gray, gray, gray + 0.02}, kRoad,
                 layout.road_disparity(y), true);
  }

  auto small_rect = [&](Rng& r) {
    const int rh = static_cast<int>(r.uniform_int(spec.obstacle_min, spec.obstacle_max));
    const int rw = static_cast<int>(r.uniform_int(spec.obstacle_min, spec.obstacle_max));
    const int base = static_cast<int>(r.uniform_int(layout.horizon + rh, h - 1));
    const int left = static_cast<int>(r.uniform_int(0, w - rw));
    return Rect{base - rh + 1, left, rh, rw};
  };

  for (int i = 0; i < spec.num_markings; ++i) {
    const Rect m = small_rect(rng);
    const Color c = obstacle_color(rng);
    canvas.paint(m, c, kRoad, 0.0, false);
    layout.markings.push_back(m);
  }

  struct Standing {
    Rect rect;
    Color color;
    int id;
    double disp;
    bool obstacle;
  };
  std::vector<Standing> standing;
  if (analog == DatasetAnalog::kLostfoundLike) {
    for (int i = 0; i < spec.num_obstacles; ++i) {
      const Rect o = small_rect(rng);
      const Color c = obstacle_color(rng);
      const double d = layout.road_disparity(o.bottom()) + spec.obstacle_lift * layout.road_step;
      standing.push_back({o, c, obstacle_id, d, true});
    }
  }
  if (num_object_classes > 0) {
    for (int i = 0; i < spec.num_objects; ++i) {
      const int k = static_cast<int>(rng.uniform_int(0, num_object_classes - 1));
      const int base = static_cast<int>(rng.uniform_int(layout.horizon + 4, h - 1));
      const double s = static_cast<double>(base - layout.horizon + 1) / (h - layout.horizon);
      const int ow = std::max(3, static_cast<int>(std::lround(rng.uniform(10.0, 22.0) * s + 4)));
      const int oh = std::max(3, static_cast<int>(std::lround(ow * rng.uniform(0.6, 0.9))));
      const int left = static_cast<int>(rng.uniform_int(-ow / 2, w - ow / 2));
      const Rect rect = clip(Rect{base - oh + 1, left, oh, ow}, h, w);
      const Color c = object_color(k, rng);
      standing.push_back({rect, c, 3 + k, layout.road_disparity(base), false});
    }
  }
  // Far to near, so nearer objects occlude farther ones.
  std::stable_sort(standing.begin(), standing.end(),
                   [](const Standing& a, const Standing& b) { return a.rect.bottom() < b.rect.bottom(); });
  for (const auto& s : standing) {
    canvas.paint(s.rect, s.color, s.id, s.disp, true);
    if (s.obstacle) {
      layout.obstacles.push_back(s.rect);
    } else {
      layout.objects.push_back(s.rect);
      layout.object_classes.push_back(s.id);
    }
  }

  Sample out;
  out.source = analog_id(analog);
  out.rgb = Tensor(Shape{3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  out.disparity = Tensor(Shape{1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  out.labels = LabelMap(h, w);
  layout.unmatched.assign(static_cast<std::size_t>(h * w), 0);
  auto rgb = out.rgb.data();
  auto disp = out.disparity.data();
  const std::size_t plane = static_cast<std::size_t>(h * w);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int ch = 0; ch < 3; ++ch) {
      const double v = canvas.rgb[i][ch] + rng.uniform(-spec.color_noise, spec.color_noise);
      rgb[ch * plane + i] = std::clamp(v, 0.0, 1.0);
    }
    const int id = canvas.label[i];
    double d = canvas.disp[i];
    if (id != obstacle_id && rng.bernoulli(spec.unmatched_fraction)) {
      d = 0.0;
      layout.unmatched[i] = 1;
    }
    disp[i] = d;
    if (analog == DatasetAnalog::kCityscapesLike) {
      out.labels.data[i] = id;
    } else if (id == kRoad) {
      out.labels.data[i] = kRawFreeSpace;
    } else if (id == obstacle_id) {
      out.labels.data[i] = kRawObstacle;
    } else {
      out.labels.data[i] = kRawBackground;
    }
  }
  if (layout_out) *layout_out = std::move(layout);
  return out;
}

Tensor preprocess_disparity(const Tensor& disparity, int crop_left, int crop_bottom,
                            double max_disparity) {
  if (disparity.rank() != 3 || disparity.dim(0) != 1) {
    throw ShapeError("disparity must be [1,H,W], got " + shape_to_string(disparity.dims()));
  }
  if (!(max_disparity > 0)) throw ConfigError("max disparity must be positive");
  const int h = static_cast<int>(disparity.dim(1));
  const int w = static_cast<int>(disparity.dim(2));
  if (crop_left < 0 || crop_bottom < 0 || crop_left >= w || crop_bottom >= h) {
    throw ConfigError("disparity crop " + std::to_string(crop_left) + "/" +
                      std::to_string(crop_bottom) + " exceeds a " + std::to_string(h) + "x" +
                      std::to_string(w) + " map");
  }
  Tensor out;
  if (crop_left == 0 && crop_bottom == 0) {
    out = disparity.clone();
  } else {
    const int ch = h - crop_bottom;
    const int cw = w - crop_left;
    Tensor cropped(Shape{1, static_cast<std::size_t>(ch), static_cast<std::size_t>(cw)});
    auto src = disparity.data();
    auto dst = cropped.data();
    for (int y = 0; y < ch; ++y) {
      for (int x = 0; x < cw; ++x) dst[y * cw + x] = src[y * w + x + crop_left];
    }
    out = bilinear_resize(cropped, h, w).clone();
  }
  for (double& v : out.data()) v /= max_disparity;
  return out;
}

AugmentParams draw_augment(const AugmentConfig& config, int height, int width, Rng& rng) {
  AugmentParams p;
  p.scale = rng.uniform(config.scale_min, config.scale_max);
  p.flip = rng.bernoulli(config.flip_probability);
  const int sh = std::max(1, static_cast<int>(std::lround(height * p.scale)));
  const int sw = std::max(1, static_cast<int>(std::lround(width * p.scale)));
  auto offset = [&](int scaled, int crop) {
    if (scaled >= crop) return static_cast<int>(rng.uniform_int(0, scaled - crop));
    return -static_cast<int>(rng.uniform_int(0, crop - scaled));
  };
  p.crop_top = offset(sh, config.crop_height);
  p.crop_left = offset(sw, config.crop_width);
  return p;
}

namespace {

Tensor resize_planes(const Tensor& x, int sh, int sw) {
  if (static_cast<int>(x.dim(1)) == sh && static_cast<int>(x.dim(2)) == sw) return x.clone();
  return bilinear_resize(x, sh, sw).clone();
}

void flip_planes(std::span<double> v, std::size_t planes, std::size_t h, std::size_t w) {
  for (std::size_t p = 0; p < planes * h; ++p) {
    std::reverse(v.begin() + static_cast<std::ptrdiff_t>(p * w),
                 v.begin() + static_cast<std::ptrdiff_t>((p + 1) * w));
  }
}

Tensor crop_planes(const Tensor& x, int top, int left, int ch, int cw) {
  const std::size_t planes = x.dim(0);
  const int h = static_cast<int>(x.dim(1));
  const int w = static_cast<int>(x.dim(2));
  Tensor out(Shape{planes, static_cast<std::size_t>(ch), static_cast<std::size_t>(cw)}, 0.0);
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (int y = 0; y < ch; ++y) {
      const int sy = y + top;
      if (sy < 0 || sy >= h) continue;
      for (int xx = 0; xx < cw; ++xx) {
        const int sx = xx + left;
        if (sx < 0 || sx >= w) continue;
        dst[(p * ch + y) * cw + xx] = src[(p * h + sy) * w + sx];
      }
    }
  }
  return out;
}

}  // namespace

Sample apply_augment(const Sample& sample, const AugmentParams& params,
                     const AugmentConfig& config) {
  const int h = static_cast<int>(sample.labels.height);
  const int w = static_cast<int>(sample.labels.width);
  if (!(params.scale > 0)) throw ConfigError("augment scale must be positive");
  const int sh = std::max(1, static_cast<int>(std::lround(h * params.scale)));
  const int sw = std::max(1, static_cast<int>(std::lround(w * params.scale)));

  Tensor rgb = resize_planes(sample.rgb, sh, sw);
  Tensor disp = resize_planes(sample.disparity, sh, sw);
  if (config.scale_disparity) {
    for (double& v : disp.data()) v *= params.scale;
  }
  LabelMap labels(sh, sw);
  for (int y = 0; y < sh; ++y) {
    const int sy = std::min(h - 1, static_cast<int>(std::floor((y + 0.5) * h / sh)));
    for (int x = 0; x < sw; ++x) {
      const int sx = std::min(w - 1, static_cast<int>(std::floor((x + 0.5) * w / sw)));
      labels.at(y, x) = sample.labels.at(sy, sx);
    }
  }
  if (params.flip) {
    flip_planes(rgb.data(), 3, sh, sw);
    flip_planes(disp.data(), 1, sh, sw);
    for (int y = 0; y < sh; ++y) {
      std::reverse(labels.data.begin() + y * sw, labels.data.begin() + (y + 1) * sw);
    }
  }

  const int ch = config.crop_height;
  const int cw = config.crop_width;
  Sample out;
  out.source = sample.source;
  out.rgb = crop_planes(rgb, params.crop_top, params.crop_left, ch, cw);
  out.disparity = crop_planes(disp, params.crop_top, params.crop_left, ch, cw);
  out.labels = LabelMap(ch, cw, config.ignore_id);
  for (int y = 0; y < ch; ++y) {
    const int sy = y + params.crop_top;
    if (sy < 0 || sy >= sh) continue;
    for (int x = 0; x < cw; ++x) {
      const int sx = x + params.crop_left;
      if (sx < 0 || sx >= sw) continue;
      out.labels.at(y, x) = labels.at(sy, sx);
    }
  }
  return out;
}

Sample augment(const Sample& sample, const AugmentConfig& config, Rng& rng) {
  const auto params = draw_augment(config, static_cast<int>(sample.labels.height),
                                   static_cast<int>(sample.labels.width), rng);
  return apply_augment(sample, params, config);
}

namespace {

Tensor labels_to_tensor(const LabelMap& labels) {
  Tensor t(Shape{1, labels.height, labels.width});
  auto d = t.data();
  for (std::size_t i = 0; i < labels.size(); ++i) d[i] = labels.data[i];
  return t;
}

LabelMap tensor_to_labels(const Tensor& t, const std::string& what) {
  if (t.rank() != 3 || t.dim(0) != 1) throw DataError(what + ": label tensor must be [1,H,W]");
  LabelMap labels(t.dim(1), t.dim(2));
  auto d = t.data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double v = d[i];
    if (v != std::floor(v) || std::abs(v) > 1e9) throw DataError(what + ": non-integer label");
    labels.data[i] = static_cast<std::int32_t>(v);
  }
  return labels;
}

std::string tensor_bytes(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  return os.str();
}

}  // namespace

void write_sample(const fs::path& split_dir, const std::string& id, const Sample& sample) {
  fs::create_directories(split_dir);
  io::write_file_atomic(split_dir / (id + ".rgb"), tensor_bytes(sample.rgb));
  io::write_file_atomic(split_dir / (id + ".disp"), tensor_bytes(sample.disparity));
  io::write_file_atomic(split_dir / (id + ".label"), tensor_bytes(labels_to_tensor(sample.labels)));
}

Sample read_sample(const fs::path& split_dir, const ManifestEntry& entry) {
  Sample s;
  s.source = entry.source;
  s.rgb = load_tensor(split_dir / (entry.id + ".rgb"));
  s.disparity = load_tensor(split_dir / (entry.id + ".disp"));
  s.labels = tensor_to_labels(load_tensor(split_dir / (entry.id + ".label")), entry.id);
  if (s.rgb.rank() != 3 || s.rgb.dim(0) != 3 || s.rgb.dim(1) != s.labels.height ||
      s.rgb.dim(2) != s.labels.width) {
    throw DataError(entry.id + ": rgb dims " + shape_to_string(s.rgb.dims()) +
                    " do not match the label map");
  }
  if (s.disparity.dims() != Shape{1, s.labels.height, s.labels.width}) {
    throw DataError(entry.id + ": disparity dims " + shape_to_string(s.disparity.dims()) +
                    " do not match the label map");
  }
  for (double v : s.disparity.data()) {
    if (!std::isfinite(v) || v < 0) throw DataError(entry.id + ": disparity must be finite and >= 0");
  }
  return s;
}

void write_manifest(const fs::path& split_dir, const std::vector<ManifestEntry>& entries) {
  std::ostringstream os;
  for (const auto& e : entries) os << e.id << ' ' << e.source << '\n';
  fs::create_directories(split_dir);
  io::write_file_atomic(split_dir / "manifest.txt", os.str());
}

std::vector<ManifestEntry> read_manifest(const fs::path& split_dir) {
  const auto path = split_dir / "manifest.txt";
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.id)) continue;
    if (!(ls >> e.source)) throw DataError("manifest line without source: '" + line + "'");
    entries.push_back(e);
  }
  return entries;
}

SplitData load_split(const fs::path& root, const std::string& split) {
  SplitData data;
  const auto dir = root / split;
  data.entries = read_manifest(dir);
  for (const auto& e : data.entries) data.samples.push_back(read_sample(dir, e));
  return data;
}

void generate_dataset(const fs::path& root, const SyntheticDatasetConfig& config) {
  if (config.train_samples < 0 || config.val_samples < 0) {
    throw ConfigError("sample counts must be non-negative");
  }
  const std::array<std::pair<std::string, int>, 2> splits{
      std::pair<std::string, int>{"train", config.train_samples},
      std::pair<std::string, int>{"val", config.val_samples}};
  for (std::size_t s = 0; s < splits.size(); ++s) {
    const auto& [split, count] = splits[s];
    const auto dir = root / split;
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < count; ++i) {
      Rng rng(derive_seed(derive_seed(config.seed, s + 1), static_cast<std::uint64_t>(i)));
      SceneSpec spec = config.base;
      spec.height = config.height;
      spec.width = config.width;
      spec.num_classes = config.num_classes;
      const auto analog = rng.bernoulli(config.lostfound_fraction) ? DatasetAnalog::kLostfoundLike
                                                                   : DatasetAnalog::kCityscapesLike;
      spec.num_obstacles = static_cast<int>(rng.uniform_int(config.obstacles_min, config.obstacles_max));
      spec.num_markings = static_cast<int>(rng.uniform_int(config.markings_min, config.markings_max));
      spec.num_objects = static_cast<int>(rng.uniform_int(config.objects_min, config.objects_max));
      spec.seed = rng.next();
      char id[32];
      std::snprintf(id, sizeof id, "%s_%05d", split.c_str(), i);
      write_sample(dir, id, generate(spec, analog));
      entries.push_back({id, analog_id(analog)});
    }
    write_manifest(dir, entries);
  }
}

}  // namespace rfnet
