#include "rfnet/model.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "rfnet/error.hpp"
#include "rfnet/rng.hpp"
#include "rfnet/text_config.hpp"

namespace rfnet {

namespace {

constexpr std::array<Variant, 5> kVariants{Variant::kSingleRgb, Variant::kRgbdStack,
                                           Variant::kRgbdConcat, Variant::kRgbRgb,
                                           Variant::kRfnet};
constexpr std::uint64_t kInitStream = 0x1A1;

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kRfnet: return "rfnet";
    case Variant::kSingleRgb: return "single_rgb";
    case Variant::kRgbdStack: return "rgbd_stack";
    case Variant::kRgbdConcat: return "rgbd_concat";
    case Variant::kRgbRgb: return "rgb_rgb";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

const std::array<Variant, 5>& all_variants() { return kVariants; }

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::full_preset(Variant v) {
  ModelConfig c;
  c.variant = v;
  return c;
}

ModelConfig ModelConfig::toy_preset(Variant v, int num_classes) {
  ModelConfig c;
  c.variant = v;
  c.stage_widths = {8, 16, 32, 64};
  c.decoder_width = 32;
  c.spp_grids = {1, 2};
  c.num_classes = num_classes;
  c.height = 64;
  c.width = 64;
  return c;
}

bool ModelConfig::dual_branch() const {
  return variant == Variant::kRfnet || variant == Variant::kRgbRgb ||
         variant == Variant::kRgbdConcat;
}

void ModelConfig::validate() const {
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0) {
    throw ConfigError("input dims " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be positive multiples of 32");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  for (int w : stage_widths) {
    if (w < 1) throw ConfigError("stage widths must be positive");
  }
  if (blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be >= 1");
  if (decoder_width < 1) throw ConfigError("decoder_width must be positive");
  if (spp_grids.empty()) throw ConfigError("spp_grids must not be empty");
  const int bottleneck = std::min(height, width) / 32;
  for (int g : spp_grids) {
    if (g < 1 || g > bottleneck) {
      throw ConfigError("spp grid " + std::to_string(g) + " exceeds the " +
                        std::to_string(bottleneck) + "x" + std::to_string(bottleneck) +
                        " bottleneck plane");
    }
  }
  if (decoder_width % static_cast<int>(spp_grids.size()) != 0) {
    throw ConfigError("decoder_width must be divisible by the number of spp grids");
  }
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "variant = " << variant_name(variant) << '\n';
  os << "stage_widths = " << join_ints(stage_widths) << '\n';
  os << "blocks_per_stage = " << blocks_per_stage << '\n';
  os << "decoder_width = " << decoder_width << '\n';
  os << "spp_grids = " << join_ints(spp_grids) << '\n';
  os << "num_classes = " << num_classes << '\n';
  os << "height = " << height << '\n';
  os << "width = " << width << '\n';
  return os.str();
}

ModelConfig ModelConfig::deserialize(const std::string& text) {
  const KeyValues kv = parse_key_values(text);
  ModelConfig c;
  c.variant = parse_variant(kv.get("variant"));
  const auto widths = parse_int_list(kv.get("stage_widths"));
  if (widths.size() != 4) throw ConfigError("stage_widths needs 4 entries");
  std::copy(widths.begin(), widths.end(), c.stage_widths.begin());
  c.blocks_per_stage = parse_int(kv.get("blocks_per_stage"));
  c.decoder_width = parse_int(kv.get("decoder_width"));
  c.spp_grids = parse_int_list(kv.get("spp_grids"));
  c.num_classes = parse_int(kv.get("num_classes"));
  c.height = parse_int(kv.get("height"));
  c.width = parse_int(kv.get("width"));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// ParamRegistry

Tensor ParamRegistry::add_param(const std::string& name, Shape dims, ParamGroup group) {
  if (find(name)) throw ContractError("duplicate parameter name " + name);
  Tensor t(std::move(dims), 0.0, true);
  entries_.push_back(ParamEntry{name, t, group, true});
  return t;
}

void ParamRegistry::add_buffer(const std::string& name, const Tensor& buffer) {
  if (find(name)) throw ContractError("duplicate buffer name " + name);
  entries_.push_back(ParamEntry{name, buffer, ParamGroup::kFresh, false});
}

const ParamEntry* ParamRegistry::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::vector<Tensor> ParamRegistry::trainable() const {
  std::vector<Tensor> out;
  for (const auto& e : entries_) {
    if (e.trainable) out.push_back(e.tensor);
  }
  return out;
}

std::vector<ParamGroup> ParamRegistry::trainable_groups() const {
  std::vector<ParamGroup> out;
  for (const auto& e : entries_) {
    if (e.trainable) out.push_back(e.group);
  }
  return out;
}

std::size_t ParamRegistry::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.tensor.numel();
  }
  return n;
}

std::size_t ParamRegistry::parameter_count(ParamGroup group) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable && e.group == group) n += e.tensor.numel();
  }
  return n;
}

void ParamRegistry::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

// ---------------------------------------------------------------------------
// build

namespace {

class Builder {
 public:
  Builder(ParamRegistry& registry, Rng& rng) : registry_(registry), rng_(rng) {}

  Tensor kaiming(const std::string& name, std::size_t cout, std::size_t cin, std::size_t k,
                 ParamGroup group) {
    Tensor w = registry_.add_param(name, Shape{cout, cin, k, k}, group);
    const double stddev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
    for (double& v : w.data()) v = stddev * rng_.normal();
    return w;
  }

  Tensor zeros(const std::string& name, Shape dims, ParamGroup group) {
    return registry_.add_param(name, std::move(dims), group);
  }

  BatchNormLayer batch_norm(const std::string& prefix, std::size_t channels, ParamGroup group) {
    BatchNormLayer bn;
    bn.gamma = registry_.add_param(prefix + ".gamma", Shape{channels}, group);
    for (double& v : bn.gamma.data()) v = 1.0;
    bn.beta = registry_.add_param(prefix + ".beta", Shape{channels}, group);
    bn.state = BatchNormState(channels);
    registry_.add_buffer(prefix + ".running_mean", bn.state.running_mean);
    registry_.add_buffer(prefix + ".running_var", bn.state.running_var);
    return bn;
  }

  ConvUnit conv_bn(const std::string& prefix, std::size_t cin, std::size_t cout, std::size_t k,
                   int stride, int padding, ParamGroup group) {
    ConvUnit u;
    u.weight = kaiming(prefix + ".weight", cout, cin, k, group);
    u.bn = batch_norm(prefix + ".bn", cout, group);
    u.stride = stride;
    u.padding = padding;
    return u;
  }

  ChannelGate gate(const std::string& prefix, std::size_t channels) {
    ChannelGate g;
    g.weight = zeros(prefix + ".weight", Shape{channels, channels, 1, 1}, ParamGroup::kFresh);
    g.bias = zeros(prefix + ".bias", Shape{channels}, ParamGroup::kFresh);
    return g;
  }

  Backbone backbone(const std::string& prefix, std::size_t in_channels, const ModelConfig& cfg) {
    const auto group = ParamGroup::kPretrainedEligible;
    Backbone b;
    const auto w0 = static_cast<std::size_t>(cfg.stage_widths[0]);
    b.stem = conv_bn(prefix + ".stem.conv", in_channels, w0, 7, 2, 3, group);
    std::size_t cin = w0;
    for (std::size_t s = 0; s < 4; ++s) {
      const auto cout = static_cast<std::size_t>(cfg.stage_widths[s]);
      for (int blk = 0; blk < cfg.blocks_per_stage; ++blk) {
        const std::string p =
            prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(blk);
        const int stride = (blk == 0 && s > 0) ? 2 : 1;
        BasicBlock block;
        block.conv1 = conv_bn(p + ".conv1", cin, cout, 3, stride, 1, group);
        block.conv2 = conv_bn(p + ".conv2", cout, cout, 3, 1, 1, group);
        if (stride != 1 || cin != cout) {
          block.shortcut = conv_bn(p + ".shortcut", cin, cout, 1, stride, 0, group);
        }
        b.stages[s].push_back(std::move(block));
        cin = cout;
      }
    }
    return b;
  }

 private:
  ParamRegistry& registry_;
  Rng& rng_;
};

}  // namespace

NetworkGraph build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  NetworkGraph g;
  g.config = config;
  Rng rng(derive_seed(seed, kInitStream));
  Builder b(g.registry, rng);

  const std::size_t rgb_in = config.variant == Variant::kRgbdStack ? 4 : 3;
  g.rgb = b.backbone("rgb", rgb_in, config);
  if (config.dual_branch()) {
    const std::size_t depth_in = config.variant == Variant::kRgbRgb ? 3 : 1;
    g.depth = b.backbone("depth", depth_in, config);
  }

  for (std::size_t s = 0; s < 4; ++s) {
    const auto c = static_cast<std::size_t>(config.stage_widths[s]);
    const std::string p = "fusion" + std::to_string(s + 1);
    switch (config.variant) {
      case Variant::kRfnet:
      case Variant::kRgbRgb:
        g.fusion[s].afc = AfcParams{b.gate(p + ".rgb_gate", c), b.gate(p + ".depth_gate", c)};
        break;
      case Variant::kRgbdConcat: {
        ConcatFusionParams cf;
        cf.joint = b.gate(p + ".joint_gate", 2 * c);
        cf.restore_weight = b.kaiming(p + ".restore.weight", c, 2 * c, 1, ParamGroup::kFresh);
        cf.restore_bias = b.zeros(p + ".restore.bias", Shape{c}, ParamGroup::kFresh);
        g.fusion[s].concat = std::move(cf);
        break;
      }
      case Variant::kSingleRgb:
      case Variant::kRgbdStack:
        g.fusion[s].se = b.gate(p + ".se_gate", c);
        break;
    }
  }

  const auto fresh = ParamGroup::kFresh;
  const auto top = static_cast<std::size_t>(config.stage_widths[3]);
  const auto width = static_cast<std::size_t>(config.decoder_width);
  const std::size_t level_width = width / config.spp_grids.size();
  g.spp.grids = config.spp_grids;
  g.spp.projection = b.conv_bn("spp.projection", top, width, 1, 1, 0, fresh);
  for (std::size_t i = 0; i < config.spp_grids.size(); ++i) {
    g.spp.levels.push_back(
        b.conv_bn("spp.level" + std::to_string(i), top, level_width, 1, 1, 0, fresh));
  }
  g.spp.fuse = b.conv_bn("spp.fuse", width + level_width * config.spp_grids.size(), width, 1, 1,
                         0, fresh);

  for (std::size_t i = 0; i < 3; ++i) {
    const auto skip_c = static_cast<std::size_t>(config.stage_widths[2 - i]);
    const std::string p = "decoder.up" + std::to_string(i);
    g.decoder.skip_projection[i] = b.conv_bn(p + ".skip", skip_c, width, 1, 1, 0, fresh);
    g.decoder.blend[i] = b.conv_bn(p + ".blend", width, width, 3, 1, 1, fresh);
  }
  const auto k = static_cast<std::size_t>(config.num_classes);
  g.decoder.logits_weight = b.kaiming("decoder.logits.weight", k, width, 1, fresh);
  g.decoder.logits_bias = b.zeros("decoder.logits.bias", Shape{k}, fresh);
  return g;
}

void copy_parameters(const NetworkGraph& src, NetworkGraph& dst) {
  for (auto& e : dst.registry.entries()) {
    const ParamEntry* s = src.registry.find(e.name);
    if (!s) throw ContractError("copy_parameters: source lacks " + e.name);
    Tensor target = e.tensor;
    target.assign(s->tensor);
  }
}

// ---------------------------------------------------------------------------
// forward

Tensor apply_conv_unit(ConvUnit& unit, const Tensor& x, Mode mode, bool relu_after) {
  Tensor y = conv2d(x, unit.weight, unit.bias, unit.stride, unit.padding);
  if (unit.bn) y = batch_norm(y, unit.bn->gamma, unit.bn->beta, unit.bn->state, mode);
  return relu_after ? relu(y) : y;
}

Tensor channel_gate(const Tensor& x, const ChannelGate& gate) {
  Tensor pooled = global_avg_pool(x);
  Shape as_map = pooled.dims();
  as_map.push_back(1);
  as_map.push_back(1);
  Tensor z = conv2d(reshape(pooled, as_map), gate.weight, gate.bias, 1, 0);
  return sigmoid(reshape(z, pooled.dims()));
}

Tensor afc_fuse(const Tensor& x, const Tensor& y, const AfcParams& params,
                std::vector<Tensor>* gates) {
  if (x.dims() != y.dims()) {
    throw ShapeError("afc_fuse: dims " + shape_to_string(x.dims()) + " vs " +
                     shape_to_string(y.dims()));
  }
  Tensor gx = channel_gate(x, params.rgb);
  Tensor gy = channel_gate(y, params.depth);
  if (gates) {
    gates->push_back(gx);
    gates->push_back(gy);
  }
  return add(channel_scale(x, gx), channel_scale(y, gy));
}

Tensor spp_forward(const Tensor& input, SppParams& params, Mode mode) {
  if (input.rank() != 4) throw ShapeError("spp_forward: expected [N,C,H,W]");
  const auto h = static_cast<int>(input.dim(2));
  const auto w = static_cast<int>(input.dim(3));
  for (int g : params.grids) {
    if (g > std::min(h, w)) {
      throw ConfigError("spp grid " + std::to_string(g) + " exceeds " + std::to_string(h) + "x" +
                        std::to_string(w) + " plane");
    }
  }
  std::vector<Tensor> parts{apply_conv_unit(params.projection, input, mode, true)};
  for (std::size_t i = 0; i < params.grids.size(); ++i) {
    Tensor pooled = adaptive_avg_pool2d(input, params.grids[i], params.grids[i]);
    Tensor level = apply_conv_unit(params.levels[i], pooled, mode, true);
    parts.push_back(bilinear_resize(level, h, w));
  }
  return apply_conv_unit(params.fuse, concat_channels(parts), mode, true);
}

namespace {

struct StageOutput {
  Tensor out;
  Tensor tap;  // last block's residual sum before the final ReLU
};

StageOutput run_stage(std::vector<BasicBlock>& blocks, Tensor x, Mode mode) {
  StageOutput result;
  for (auto& block : blocks) {
    Tensor h = apply_conv_unit(block.conv1, x, mode, true);
    h = apply_conv_unit(block.conv2, h, mode, false);
    Tensor shortcut = block.shortcut ? apply_conv_unit(*block.shortcut, x, mode, false) : x;
    result.tap = add(h, shortcut);
    x = relu(result.tap);
  }
  result.out = x;
  return result;
}

Tensor run_stem(Backbone& b, const Tensor& x, Mode mode) {
  return max_pool2d(apply_conv_unit(b.stem, x, mode, true), 3, 2, 1);
}

void require_input(const Tensor& t, std::size_t channels, const ModelConfig& cfg,
                   const char* what) {
  const Shape expected{t.rank() == 4 ? t.dim(0) : 0, channels,
                       static_cast<std::size_t>(cfg.height), static_cast<std::size_t>(cfg.width)};
  if (!t.defined() || t.rank() != 4 || t.dims() != expected) {
    throw ShapeError(std::string("forward: ") + what + " input must be [N," +
                     std::to_string(channels) + "," + std::to_string(cfg.height) + "," +
                     std::to_string(cfg.width) + "], got " + shape_to_string(t.dims()));
  }
}

}  // namespace

ForwardTrace forward(NetworkGraph& graph, const Tensor& rgb, const Tensor& depth, Mode mode,
                     const ForwardOptions& options) {
  const ModelConfig& cfg = graph.config;
  const Variant v = cfg.variant;
  require_input(rgb, 3, cfg, "rgb");
  const bool uses_depth = v == Variant::kRfnet || v == Variant::kRgbdConcat ||
                          v == Variant::kRgbdStack;
  if (uses_depth) {
    require_input(depth, 1, cfg, "depth");
    if (depth.dim(0) != rgb.dim(0)) throw ShapeError("forward: rgb/depth batch sizes differ");
  }
  const double fusion_scale =
      options.fusion_scale.value_or(v == Variant::kRgbRgb ? 0.5 : 1.0);

  ForwardTrace trace;
  Tensor x = run_stem(graph.rgb, v == Variant::kRgbdStack ? concat_channels({rgb, depth}) : rgb,
                      mode);
  Tensor d;
  if (graph.depth) d = run_stem(*graph.depth, v == Variant::kRgbRgb ? rgb : depth, mode);

  std::array<Tensor, 4> taps;
  for (std::size_t s = 0; s < 4; ++s) {
    StageOutput rs = run_stage(graph.rgb.stages[s], x, mode);
    trace.rgb_stages[s] = rs.out;
    taps[s] = rs.tap;
    if (graph.depth) {
      d = run_stage(graph.depth->stages[s], d, mode).out;
      trace.depth_stages[s] = d;
    }
    FusionPoint& fp = graph.fusion[s];
    Tensor fused;
    if (fp.afc) {
      fused = afc_fuse(rs.out, d, *fp.afc, &trace.gates);
    } else if (fp.concat) {
      Tensor joint = concat_channels({rs.out, d});
      Tensor gate = channel_gate(joint, fp.concat->joint);
      trace.gates.push_back(gate);
      fused = conv2d(channel_scale(joint, gate), fp.concat->restore_weight,
                     fp.concat->restore_bias, 1, 0);
    } else {
      Tensor gate = channel_gate(rs.out, *fp.se);
      trace.gates.push_back(gate);
      fused = channel_scale(rs.out, gate);
    }
    if (fusion_scale != 1.0) fused = scale(fused, fusion_scale);
    trace.fused[s] = fused;
    x = fused;
  }

  trace.spp = spp_forward(x, graph.spp, mode);
  trace.skips = {taps[2], taps[1], taps[0]};
  Tensor y = trace.spp;
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor& skip = trace.skips[i];
    Tensor projected = apply_conv_unit(graph.decoder.skip_projection[i], skip, mode, true);
    y = bilinear_resize(y, static_cast<int>(skip.dim(2)), static_cast<int>(skip.dim(3)));
    y = apply_conv_unit(graph.decoder.blend[i], add(y, projected), mode, true);
    trace.decoder[i] = y;
  }
  Tensor logits = conv2d(y, graph.decoder.logits_weight, graph.decoder.logits_bias, 1, 0);
  trace.logits = bilinear_resize(logits, cfg.height, cfg.width);
  return trace;
}

}  // namespace rfnet
