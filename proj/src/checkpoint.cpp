#include "rfnet/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "rfnet/error.hpp"
#include "rfnet/tensor_io.hpp"

namespace rfnet {

namespace {

std::string meta_text(const KeyValues& meta) {
  std::ostringstream os;
  for (const auto& [k, v] : meta.all()) os << k << " = " << v << '\n';
  return os.str();
}

std::vector<std::string> trainable_names(const NetworkGraph& graph) {
  std::vector<std::string> names;
  for (const auto& e : graph.registry.entries()) {
    if (e.trainable) names.push_back(e.name);
  }
  return names;
}

}  // namespace

std::string encode_checkpoint(const NetworkGraph& graph, const KeyValues& meta,
                              const OptimizerState* optimizer) {
  std::ostringstream os(std::ios::binary);
  os.write("RFC1", 4);
  io::write_string(os, graph.config.serialize());
  KeyValues m = meta;
  if (optimizer) m.set("optimizer_step", std::to_string(optimizer->step));
  io::write_string(os, meta_text(m));
  const auto& entries = graph.registry.entries();
  const auto names = trainable_names(graph);
  std::uint32_t count = static_cast<std::uint32_t>(entries.size());
  if (optimizer) {
    if (optimizer->first_moment.size() != names.size()) {
      throw ContractError("optimizer state does not match the graph's trainable parameters");
    }
    count += static_cast<std::uint32_t>(2 * names.size());
  }
  io::write_u32(os, count);
  for (const auto& e : entries) {
    io::write_string(os, e.name);
    write_tensor(os, e.tensor);
  }
  if (optimizer) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      io::write_string(os, "optim.m/" + names[i]);
      write_tensor(os, optimizer->first_moment[i]);
      io::write_string(os, "optim.v/" + names[i]);
      write_tensor(os, optimizer->second_moment[i]);
    }
  }
  return os.str();
}

void save_checkpoint(const std::filesystem::path& path, const NetworkGraph& graph,
                     const KeyValues& meta, const OptimizerState* optimizer) {
  io::write_file_atomic(path, encode_checkpoint(graph, meta, optimizer));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  io::expect_magic(is, "RFC1", "checkpoint");
  Checkpoint c;
  c.config = ModelConfig::deserialize(io::read_string(is));
  c.meta = parse_key_values(io::read_string(is));
  const std::uint32_t count = io::read_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = io::read_string(is);
    Tensor t = read_tensor(is);
    if (!c.tensors.emplace(std::move(name), std::move(t)).second) {
      throw DataError("checkpoint " + path.string() + " repeats a tensor name");
    }
  }
  return c;
}

void restore_graph(const Checkpoint& checkpoint, NetworkGraph& graph) {
  if (!(checkpoint.config == graph.config)) {
    throw ConfigError("checkpoint model config does not match the graph");
  }
  for (const auto& e : graph.registry.entries()) {
    auto it = checkpoint.tensors.find(e.name);
    if (it == checkpoint.tensors.end()) throw DataError("checkpoint lacks tensor '" + e.name + "'");
    Tensor dst = e.tensor;
    dst.assign(it->second);
  }
}

void restore_optimizer(const Checkpoint& checkpoint, const NetworkGraph& graph,
                       OptimizerState& optimizer) {
  const auto names = trainable_names(graph);
  if (optimizer.first_moment.size() != names.size()) {
    throw ContractError("optimizer state does not match the graph's trainable parameters");
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto m = checkpoint.tensors.find("optim.m/" + names[i]);
    auto v = checkpoint.tensors.find("optim.v/" + names[i]);
    if (m == checkpoint.tensors.end() || v == checkpoint.tensors.end()) {
      throw DataError("checkpoint lacks optimizer moments for '" + names[i] + "'");
    }
    optimizer.first_moment[i].assign(m->second);
    optimizer.second_moment[i].assign(v->second);
  }
  optimizer.step = std::stoll(checkpoint.meta.get("optimizer_step"));
}

}  // namespace rfnet
