#pragma once

// RGB-D fusion segmentation network: two ResNet-18 style branches (RGB main,
// depth subordinate) joined after every stage by attention-gated fusion,
// a spatial pyramid pooling block and a three-stage upsampling decoder.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rfnet/ops.hpp"
#include "rfnet/tensor.hpp"

namespace rfnet {

enum class Variant { kRfnet, kSingleRgb, kRgbdStack, kRgbdConcat, kRgbRgb };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
const std::array<Variant, 5>& all_variants();

struct ModelConfig {
  Variant variant = Variant::kRfnet;
  std::array<int, 4> stage_widths{64, 128, 256, 512};
  int blocks_per_stage = 2;
  int decoder_width = 128;
  std::vector<int> spp_grids{1, 2, 4, 8};
  int num_classes = 20;
  int height = 768;
  int width = 768;

  /// Widths [64,128,256,512], decoder 128, grids [1,2,4,8], 19+1 classes.
  static ModelConfig full_preset(Variant v);
  /// Widths [8,16,32,64], decoder 32, grids [1,2], 64x64 input.
  static ModelConfig toy_preset(Variant v, int num_classes);

  bool dual_branch() const;
  void validate() const;

  /// key = value text, one entry per line.
  std::string serialize() const;
  static ModelConfig deserialize(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

/// Parameters eligible for ImageNet initialization (both backbones) train at
/// a reduced rate; everything else is fresh.
enum class ParamGroup { kPretrainedEligible, kFresh };

struct ParamEntry {
  std::string name;
  Tensor tensor;
  ParamGroup group;
  bool trainable;
};

class ParamRegistry {
 public:
  Tensor add_param(const std::string& name, Shape dims, ParamGroup group);
  void add_buffer(const std::string& name, const Tensor& buffer);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  const ParamEntry* find(std::string_view name) const;
  std::vector<Tensor> trainable() const;
  std::vector<ParamGroup> trainable_groups() const;

  /// Number of trainable scalars.
  std::size_t parameter_count() const;
  std::size_t parameter_count(ParamGroup group) const;

  void zero_grad();

 private:
  std::vector<ParamEntry> entries_;
};

struct BatchNormLayer {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;
};

/// Convolution, optionally followed by batch norm.
struct ConvUnit {
  Tensor weight;
  Tensor bias;  // undefined when followed by batch norm
  std::optional<BatchNormLayer> bn;
  int stride = 1;
  int padding = 0;
};

struct BasicBlock {
  ConvUnit conv1;
  ConvUnit conv2;
  std::optional<ConvUnit> shortcut;
};

struct Backbone {
  ConvUnit stem;
  std::array<std::vector<BasicBlock>, 4> stages;
};

/// Squeeze-and-excitation style gate: sigmoid(conv1x1(gap(x))).
struct ChannelGate {
  Tensor weight;  // [C,C,1,1]
  Tensor bias;    // [C]
};

struct AfcParams {
  ChannelGate rgb;
  ChannelGate depth;
};

/// Concatenation fusion: gate over the 2C concatenation, then 1x1 restore.
struct ConcatFusionParams {
  ChannelGate joint;
  Tensor restore_weight;  // [C,2C,1,1]
  Tensor restore_bias;    // [C]
};

struct FusionPoint {
  std::optional<AfcParams> afc;              // rfnet, rgb_rgb
  std::optional<ConcatFusionParams> concat;  // rgbd_concat
  std::optional<ChannelGate> se;             // single-branch variants
};

struct SppParams {
  std::vector<int> grids;
  ConvUnit projection;
  std::vector<ConvUnit> levels;
  ConvUnit fuse;
};

struct DecoderParams {
  std::array<ConvUnit, 3> skip_projection;  // strides 16, 8, 4
  std::array<ConvUnit, 3> blend;
  Tensor logits_weight;
  Tensor logits_bias;
};

struct NetworkGraph {
  ModelConfig config;
  ParamRegistry registry;
  Backbone rgb;
  std::optional<Backbone> depth;
  std::array<FusionPoint, 4> fusion;
  SppParams spp;
  DecoderParams decoder;

  NetworkGraph() = default;
  NetworkGraph(const NetworkGraph&) = delete;
  NetworkGraph& operator=(const NetworkGraph&) = delete;
  NetworkGraph(NetworkGraph&&) = default;
  NetworkGraph& operator=(NetworkGraph&&) = default;

  std::size_t parameter_count() const { return registry.parameter_count(); }
};

/// Builds the graph with deterministic initialization: Kaiming fan-in normal
/// convolutions, BN gamma=1 beta=0, zeroed attention gates.
NetworkGraph build(const ModelConfig& config, std::uint64_t seed);

/// Copies every registered tensor of `src` into `dst` by name (dims must match).
void copy_parameters(const NetworkGraph& src, NetworkGraph& dst);

struct ForwardTrace {
  std::array<Tensor, 4> rgb_stages;    // RGB branch stage outputs before fusion
  std::array<Tensor, 4> depth_stages;  // empty for single-branch variants
  std::array<Tensor, 4> fused;         // fusion / SE output fed to the next stage
  std::array<Tensor, 3> skips;         // pre-ReLU taps at strides 16, 8, 4
  std::vector<Tensor> gates;           // every attention gate vector produced
  Tensor spp;
  std::array<Tensor, 3> decoder;
  Tensor logits;  // [N,K,H,W]
};

struct ForwardOptions {
  /// Factor applied to every fused map. Defaults to 0.5 for rgb_rgb, else 1.
  std::optional<double> fusion_scale;
};

/// rgb [N,3,H,W]; depth [N,1,H,W] (ignored by single_rgb, may be undefined).
ForwardTrace forward(NetworkGraph& graph, const Tensor& rgb, const Tensor& depth, Mode mode,
                     const ForwardOptions& options = {});

// Building blocks exposed for testing and diagnostics.

Tensor apply_conv_unit(ConvUnit& unit, const Tensor& x, Mode mode, bool relu_after);
/// Gate weights in (0,1): [C] for a single map, [N,C] for a batch.
Tensor channel_gate(const Tensor& x, const ChannelGate& gate);
Tensor afc_fuse(const Tensor& x, const Tensor& y, const AfcParams& params,
                std::vector<Tensor>* gates = nullptr);
Tensor spp_forward(const Tensor& input, SppParams& params, Mode mode);

}  // namespace rfnet
