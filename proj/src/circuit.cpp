#include "vsalens/circuit.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <set>

namespace vsalens {

const char* to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::Token: return "TOKEN";
    case NodeKind::AttnOut: return "ATTN_OUT";
    case NodeKind::MlpNeuron: return "MLP_NEURON";
    case NodeKind::Unembed: return "UNEMBED";
  }
  return "?";
}

NodeId NodeId::producer(const AtomLabel& atom) {
  switch (atom.kind) {
    case AtomKind::Token: return token(atom.index);
    case AtomKind::AttnOut: return attn(atom.layer, atom.head, atom.index);
    case AtomKind::MlpOut: return neuron(atom.layer, atom.index);
  }
  return {};
}

long NodeId::order() const {
  switch (kind) {
    case NodeKind::Token: return 0;
    case NodeKind::AttnOut: return 1 + 2L * layer;
    case NodeKind::MlpNeuron: return 2 + 2L * layer;
    case NodeKind::Unembed: return std::numeric_limits<long>::max();
  }
  return 0;
}

std::string NodeId::str() const {
  switch (kind) {
    case NodeKind::Token: return "tok:" + std::to_string(index);
    case NodeKind::AttnOut: return AtomLabel::attn(layer, head, index).str();
    case NodeKind::MlpNeuron: return AtomLabel::mlp(layer, index).str();
    case NodeKind::Unembed: return "unembed:" + std::to_string(index);
  }
  return "?";
}

NodeId NodeId::parse(const std::string& s) {
  if (s.rfind("unembed:", 0) == 0) {
    try {
      return unembed(AtomLabel::parse("tok:" + s.substr(8)).index);
    } catch (const ArgumentError&) {
      throw ArgumentError("bad node id: " + s);
    }
  }
  return producer(AtomLabel::parse(s));
}

CircuitGraph::CircuitGraph(std::vector<NodeId> nodes, std::vector<Edge> edges, std::string config_hash,
                           double min_cos)
    : nodes_(std::move(nodes)), edges_(std::move(edges)), config_hash_(std::move(config_hash)), min_cos_(min_cos) {
  std::sort(nodes_.begin(), nodes_.end());
  nodes_.erase(std::unique(nodes_.begin(), nodes_.end()), nodes_.end());
  std::sort(edges_.begin(), edges_.end());
  for (const auto& e : edges_) {
    if (!has(e.source) || !has(e.target)) throw ConsistencyError("edge endpoint missing from node set");
    if (e.source.order() >= e.target.order())
      throw ConsistencyError("edge " + e.source.str() + " -> " + e.target.str() + " violates layer order");
  }
}

bool CircuitGraph::has(const NodeId& n) const { return std::binary_search(nodes_.begin(), nodes_.end(), n); }

CircuitGraph build_graph(const std::vector<Explanation>& explanations, const ExplainerConfig& explainer,
                         const GraphConfig& config, const FoldedModel* model) {
  const double threshold = config.min_cos.value_or(explainer.min_atom_cos);
  const std::string hash = explainer.hash();
  std::set<NodeId> nodes;
  std::vector<Edge> edges;
  for (const auto& e : explanations) {
    if (e.config_hash != hash)
      throw ConsistencyError("explanation for neuron " + std::to_string(e.layer) + "." + std::to_string(e.neuron) +
                             " was produced under config " + e.config_hash + ", expected " + hash);
    const NodeId target = NodeId::neuron(e.layer, e.neuron);
    for (const auto& m : e.members) {
      if (std::abs(m.atom_cos) < threshold) continue;
      const NodeId source = NodeId::producer(m.label);
      nodes.insert(source);
      nodes.insert(target);
      edges.push_back({source, target, m.sign, m.atom_cos});
    }
  }

  if (config.unembed_links) {
    if (model == nullptr) throw ArgumentError("build_graph: unembed links need the model");
    if (config.unembed_top < 1) throw ArgumentError("build_graph: unembed_top must be >= 1");
    const auto& w = model->weights();
    Matrix tokens = w.w_e;
    for (Eigen::Index t = 0; t < tokens.rows(); ++t) {
      tokens.row(t).array() -= tokens.row(t).mean();
      const double n = tokens.row(t).norm();
      if (n > 0.0) tokens.row(t) /= n;
    }
    std::vector<NodeId> neurons;
    for (const auto& n : nodes)
      if (n.kind == NodeKind::MlpNeuron) neurons.push_back(n);
    for (const auto& n : neurons) {
      const Vector out = centered(w.layers[static_cast<std::size_t>(n.layer)].w_out.row(n.index).transpose());
      const double norm = out.norm();
      if (norm == 0.0) continue;
      const Vector cos = tokens * (out / norm);
      std::vector<int> ids;
      for (Eigen::Index t = 0; t < cos.size(); ++t)
        if (std::abs(cos(t)) >= threshold) ids.push_back(static_cast<int>(t));
      const auto keep = std::min<std::size_t>(ids.size(), static_cast<std::size_t>(config.unembed_top));
      std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep), ids.end(), [&](int a, int b) {
        if (std::abs(cos(a)) != std::abs(cos(b))) return std::abs(cos(a)) > std::abs(cos(b));
        return a < b;
      });
      for (std::size_t i = 0; i < keep; ++i) {
        const NodeId u = NodeId::unembed(ids[i]);
        nodes.insert(u);
        edges.push_back({n, u, cos(ids[i]) < 0.0 ? -1 : 1, cos(ids[i])});
      }
    }
  }
  return CircuitGraph({nodes.begin(), nodes.end()}, std::move(edges), hash, threshold);
}

CircuitGraph trace(const CircuitGraph& graph, const NodeId& node, int depth, Direction direction) {
  if (!graph.has(node)) throw LookupError("node not in graph: " + node.str());
  if (depth < 0) throw ArgumentError("trace: depth must be >= 0");
  std::multimap<NodeId, const Edge*> adjacency;
  for (const auto& e : graph.edges())
    adjacency.emplace(direction == Direction::Upstream ? e.target : e.source, &e);

  std::set<NodeId> seen{node};
  std::set<Edge> kept;
  std::deque<std::pair<NodeId, int>> queue{{node, 0}};
  while (!queue.empty()) {
    const auto [cur, d] = queue.front();
    queue.pop_front();
    if (d == depth) continue;
    auto [lo, hi] = adjacency.equal_range(cur);
    for (auto it = lo; it != hi; ++it) {
      const Edge& e = *it->second;
      kept.insert(e);
      const NodeId next = direction == Direction::Upstream ? e.source : e.target;
      if (seen.insert(next).second) queue.emplace_back(next, d + 1);
    }
  }
  // Keep only edges whose both endpoints were reached within the depth bound.
  std::vector<Edge> edges;
  for (const auto& e : kept)
    if (seen.count(e.source) && seen.count(e.target)) edges.push_back(e);
  return CircuitGraph({seen.begin(), seen.end()}, std::move(edges), graph.config_hash(), graph.min_cos());
}

namespace {

std::string dot_escape(const std::string& s) {
  std::string out;
  for (unsigned char c : s) {
    if (c == '"' || c == '\\')
      out += '\\', out += static_cast<char>(c);
    else if (c == '\n')
      out += "\\n";
    else if (c < 0x20)
      out += '?';
    else
      out += static_cast<char>(c);
  }
  return out;
}

const char* shape_of(NodeKind k) {
  switch (k) {
    case NodeKind::Token: return "ellipse";
    case NodeKind::AttnOut: return "diamond";
    case NodeKind::MlpNeuron: return "box";
    case NodeKind::Unembed: return "doubleoctagon";
  }
  return "ellipse";
}

}  // namespace

void export_dot(const CircuitGraph& graph, const std::filesystem::path& path, const Vocabulary* vocab) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FilesystemError("cannot write " + path.string());
  if (graph.nodes().empty()) {
    out << "digraph {}\n";
    if (!out) throw FilesystemError("write failed for " + path.string());
    return;
  }
  out << "digraph circuit {\n  rankdir=LR;\n";
  for (const auto& n : graph.nodes()) {
    std::string label = n.str();
    if (vocab && (n.kind == NodeKind::Token || n.kind == NodeKind::Unembed) &&
        static_cast<std::size_t>(n.index) < vocab->size())
      label += "\\n'" + dot_escape(vocab->decode(n.index)) + "'";
    out << "  \"" << n.str() << "\" [shape=" << shape_of(n.kind) << ", label=\"" << label << "\"];\n";
  }
  char buf[32];
  for (const auto& e : graph.edges()) {
    std::snprintf(buf, sizeof buf, "%.2f", e.cos);
    out << "  \"" << e.source.str() << "\" -> \"" << e.target.str() << "\" [label=\"" << buf << "\"";
    if (e.sign < 0) out << ", style=dashed";
    out << "];\n";
  }
  out << "}\n";
  if (!out) throw FilesystemError("write failed for " + path.string());
}

EdgeVerification verify_edge(const FoldedModel& model, const NodeId& neuron, int target_token_id,
                             const std::vector<std::vector<int>>& prompts) {
  if (neuron.kind != NodeKind::MlpNeuron) throw ArgumentError("verify_edge: " + neuron.str() + " is not an MLP neuron");
  EdgeVerification v;
  const AblationSpec spec{neuron.layer, neuron.index, AblationMode::ZeroActivation, {}};
  for (const auto& p : prompts) {
    const auto d = logit_delta(model, p, target_token_id, spec);
    (d.delta < 0.0 ? v.negative : v.non_negative)++;
    v.deltas.push_back(d);
  }
  return v;
}

}  // namespace vsalens
