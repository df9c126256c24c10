#pragma once

// Circuit graphs assembled from explanation memberships across layers.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vsalens/explainer.hpp"
#include "vsalens/forward.hpp"
#include "vsalens/vocab.hpp"

namespace vsalens {

enum class NodeKind { Token = 0, AttnOut = 1, MlpNeuron = 2, Unembed = 3 };

const char* to_string(NodeKind kind);

struct NodeId {
  NodeKind kind = NodeKind::Token;
  int layer = -1;
  int head = -1;
  int index = 0;

  auto operator<=>(const NodeId&) const = default;

  static NodeId token(int id) { return {NodeKind::Token, -1, -1, id}; }
  static NodeId attn(int layer, int head, int dim) { return {NodeKind::AttnOut, layer, head, dim}; }
  static NodeId neuron(int layer, int index) { return {NodeKind::MlpNeuron, layer, -1, index}; }
  static NodeId unembed(int id) { return {NodeKind::Unembed, -1, -1, id}; }
  // The node that writes a candidate atom.
  static NodeId producer(const AtomLabel& atom);

  // Position in embedding -> attn 0 -> mlp 0 -> ... -> unembed order.
  long order() const;
  // "tok:12", "attn:1.4.11", "mlp:7.1321", "unembed:284"
  std::string str() const;
  static NodeId parse(const std::string& s);
};

struct Edge {
  NodeId source;
  NodeId target;
  int sign = 1;
  double cos = 0.0;

  auto operator<=>(const Edge&) const = default;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

struct GraphConfig {
  bool unembed_links = false;
  // Unset: the explainer's min_atom_cos. Lower it for exploratory queries.
  std::optional<double> min_cos;
  // Strongest unembed links kept per neuron.
  int unembed_top = 20;
};

class CircuitGraph {
 public:
  CircuitGraph() = default;
  CircuitGraph(std::vector<NodeId> nodes, std::vector<Edge> edges, std::string config_hash, double min_cos);

  const std::vector<NodeId>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::string& config_hash() const { return config_hash_; }
  double min_cos() const { return min_cos_; }
  bool has(const NodeId& n) const;

 private:
  std::vector<NodeId> nodes_;  // sorted, unique
  std::vector<Edge> edges_;    // sorted
  std::string config_hash_;
  double min_cos_ = 0.0;
};

// One edge per explanation member whose |cos| reaches the threshold. All
// explanations must carry the same config hash. `model` is required for
// unembed links (centered token embeddings as targets).
CircuitGraph build_graph(const std::vector<Explanation>& explanations, const ExplainerConfig& explainer,
                         const GraphConfig& config, const FoldedModel* model = nullptr);

enum class Direction { Upstream, Downstream };

CircuitGraph trace(const CircuitGraph& graph, const NodeId& node, int depth, Direction direction);

void export_dot(const CircuitGraph& graph, const std::filesystem::path& path, const Vocabulary* vocab = nullptr);

struct EdgeVerification {
  std::vector<LogitDelta> deltas;  // per prompt
  int negative = 0;
  int non_negative = 0;
};

EdgeVerification verify_edge(const FoldedModel& model, const NodeId& neuron, int target_token_id,
                             const std::vector<std::vector<int>>& prompts);

}  // namespace vsalens
