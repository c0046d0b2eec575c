#pragma once

// Checkpoint file: "RFC1", the serialized ModelConfig, a key = value metadata
// block, a u32 tensor count, then each named tensor as a length-prefixed name
// followed by the portable tensor format. Parameters and batch-norm buffers
// use their registry names; Adam moments are stored as "optim.m/<name>" and
// "optim.v/<name>".

#include <filesystem>
#include <map>
#include <string>

#include "rfnet/model.hpp"
#include "rfnet/optim.hpp"
#include "rfnet/text_config.hpp"

namespace rfnet {

struct Checkpoint {
  ModelConfig config;
  KeyValues meta;
  std::map<std::string, Tensor> tensors;
};

std::string encode_checkpoint(const NetworkGraph& graph, const KeyValues& meta,
                              const OptimizerState* optimizer = nullptr);
void save_checkpoint(const std::filesystem::path& path, const NetworkGraph& graph,
                     const KeyValues& meta, const OptimizerState* optimizer = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every registered tensor of `graph` from the checkpoint (by name).
void restore_graph(const Checkpoint& checkpoint, NetworkGraph& graph);
/// Restores Adam moments and the step counter; the state must already be
/// shaped for `graph`'s trainable parameters.
void restore_optimizer(const Checkpoint& checkpoint, const NetworkGraph& graph,
                       OptimizerState& optimizer);

}  // namespace rfnet
