#include "vsalens/json_io.hpp"

#include <fstream>
#include <set>

namespace vsalens {

Json to_json(const ExplainerConfig& c) {
  Json j;
  j["min_atom_cos"] = c.min_atom_cos;
  j["weak_atom_cos"] = c.weak_atom_cos;
  j["min_gain"] = c.min_gain;
  j["shortlist_k"] = c.shortlist_k;
  j["max_bundle"] = c.max_bundle;
  j["atom_kinds"] = c.atom_kinds.str();
  j["signed"] = c.is_signed();
  j["matching_pursuit"] = c.matching_pursuit;
  j["normalize_atoms"] = c.normalize_atoms;
  j["exact_shortlist"] = c.exact_shortlist;
  j["index"] = {{"degree", c.index.degree},
                {"construction_beam", c.index.construction_beam},
                {"query_beam", c.index.query_beam},
                {"seed", c.index.seed}};
  j["hash"] = c.hash();
  return j;
}

ExplainerConfig explainer_config_from_json(const Json& j) {
  if (!j.is_object()) throw ArgumentError("explainer config must be a JSON object");
  static const std::set<std::string> known{"min_atom_cos",    "weak_atom_cos",   "min_gain", "shortlist_k",
                                           "max_bundle",      "atom_kinds",      "signed",   "matching_pursuit",
                                           "normalize_atoms", "exact_shortlist", "index",    "hash",
                                           "threads"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ArgumentError("unknown explainer config key: " + k);
  ExplainerConfig c;
  try {
    c.min_atom_cos = j.value("min_atom_cos", c.min_atom_cos);
    c.weak_atom_cos = j.value("weak_atom_cos", c.weak_atom_cos);
    c.min_gain = j.value("min_gain", c.min_gain);
    c.shortlist_k = j.value("shortlist_k", c.shortlist_k);
    c.max_bundle = j.value("max_bundle", c.max_bundle);
    if (j.contains("atom_kinds")) c.atom_kinds = AtomKinds::parse(j["atom_kinds"].get<std::string>());
    if (j.contains("signed")) c.signed_members = j["signed"].get<bool>();
    c.matching_pursuit = j.value("matching_pursuit", c.matching_pursuit);
    c.normalize_atoms = j.value("normalize_atoms", c.normalize_atoms);
    c.exact_shortlist = j.value("exact_shortlist", c.exact_shortlist);
    c.threads = j.value("threads", c.threads);
    if (j.contains("index")) {
      const auto& ix = j["index"];
      c.index.degree = ix.value("degree", c.index.degree);
      c.index.construction_beam = ix.value("construction_beam", c.index.construction_beam);
      c.index.query_beam = ix.value("query_beam", c.index.query_beam);
      c.index.seed = ix.value("seed", c.index.seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("explainer config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

Json label_json(const AtomLabel& l, const Vocabulary* vocab) {
  Json j;
  j["atom"] = l.str();
  j["kind"] = to_string(l.kind);
  if (vocab && l.kind == AtomKind::Token && static_cast<std::size_t>(l.index) < vocab->size())
    j["token"] = vocab->decode(l.index);
  return j;
}

}  // namespace

Json to_json(const Explanation& e, const Vocabulary* vocab, bool with_trace) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["layer"] = e.layer;
  j["neuron"] = e.neuron;
  j["config_hash"] = e.config_hash;
  j["bundle_cos"] = e.bundle_cos;
  j["size"] = e.members.size();
  Json members = Json::array();
  for (const auto& m : e.members) {
    Json mj = label_json(m.label, vocab);
    mj["sign"] = m.sign;
    mj["atom_cos"] = m.atom_cos;
    members.push_back(std::move(mj));
  }
  j["members"] = std::move(members);
  if (with_trace) {
    Json trace = Json::array();
    for (const auto& t : e.trace) {
      Json tj = label_json(t.label, vocab);
      tj["sign"] = t.sign;
      tj["atom_cos"] = t.atom_cos;
      tj["bundle_cos"] = t.bundle_cos;
      tj["verdict"] = to_string(t.verdict);
      trace.push_back(std::move(tj));
    }
    j["trace"] = std::move(trace);
  }
  return j;
}

Explanation explanation_from_json(const Json& j) {
  try {
    if (j.at("schema_version").get<int>() != kSchemaVersion)
      throw InputError("unsupported explanation schema_version");
    Explanation e;
    e.layer = j.at("layer").get<int>();
    e.neuron = j.at("neuron").get<int>();
    e.config_hash = j.at("config_hash").get<std::string>();
    e.bundle_cos = j.at("bundle_cos").get<double>();
    for (const auto& m : j.at("members"))
      e.members.push_back({AtomLabel::parse(m.at("atom").get<std::string>()), m.at("sign").get<int>(),
                           m.at("atom_cos").get<double>()});
    if (j.contains("trace")) {
      for (const auto& t : j["trace"]) {
        TraceEntry te;
        te.label = AtomLabel::parse(t.at("atom").get<std::string>());
        te.sign = t.at("sign").get<int>();
        te.atom_cos = t.at("atom_cos").get<double>();
        te.bundle_cos = t.at("bundle_cos").get<double>();
        const auto v = t.at("verdict").get<std::string>();
        te.verdict = v == "accepted"        ? Verdict::Accepted
                     : v == "below_min_cos" ? Verdict::BelowMinCos
                     : v == "no_gain"       ? Verdict::NoGain
                                            : Verdict::WeakGain;
        e.trace.push_back(te);
      }
    }
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw InputError(std::string("malformed explanation JSON: ") + ex.what());
  } catch (const ArgumentError& ex) {
    throw InputError(std::string("malformed explanation JSON: ") + ex.what());
  }
}

Json to_json(const CoverageStats& c) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["neurons"] = c.neurons;
  j["fraction_ge_0.3"] = c.fraction_ge_0_3;
  j["fraction_ge_0.5"] = c.fraction_ge_0_5;
  j["mean_bundle_cos"] = c.mean_bundle_cos;
  j["fraction_size_le_40"] = c.fraction_size_le_40;
  j["size_histogram"] = c.size_histogram;
  return j;
}

Json to_json(const GramReport& r) {
  Json j;
  j["target"] = r.target;
  j["size"] = r.size;
  j["diag_mean"] = r.diag_mean;
  j["diag_min"] = r.diag_min;
  j["offdiag_mean"] = r.offdiag_mean;
  j["offdiag_median"] = r.offdiag_median;
  j["offdiag_max"] = r.offdiag_max;
  j["threshold"] = r.threshold;
  j["frac_above"] = r.frac_above;
  return j;
}

namespace {

Json to_json(const BiasCosSummary& s) {
  return {{"mean_abs", s.mean_abs}, {"max_abs", s.max_abs}, {"argmax_token", s.argmax_token}};
}

}  // namespace

Json to_json(const BiasReport& r) {
  Json j;
  j["max_attn_bias_layer"] = r.max_attn_bias_layer;
  j["max_mlp_bias_layer"] = r.max_mlp_bias_layer;
  Json layers = Json::array();
  for (const auto& l : r.layers)
    layers.push_back({{"layer", l.layer},
                      {"attn_bias_norm", l.attn_bias_norm},
                      {"mlp_bias_norm", l.mlp_bias_norm},
                      {"attn_vs_embedding", to_json(l.attn_vs_embedding)},
                      {"mlp_vs_embedding", to_json(l.mlp_vs_embedding)}});
  j["layers"] = std::move(layers);
  return j;
}

Json to_json(const CircuitGraph& g, const Vocabulary* vocab) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["config_hash"] = g.config_hash();
  j["min_cos"] = g.min_cos();
  Json nodes = Json::array();
  for (const auto& n : g.nodes()) {
    Json nj;
    nj["id"] = n.str();
    nj["kind"] = to_string(n.kind);
    nj["layer"] = n.layer;
    nj["head"] = n.head;
    nj["index"] = n.index;
    if (vocab && (n.kind == NodeKind::Token || n.kind == NodeKind::Unembed) &&
        static_cast<std::size_t>(n.index) < vocab->size())
      nj["label"] = vocab->decode(n.index);
    else
      nj["label"] = n.str();
    nodes.push_back(std::move(nj));
  }
  Json edges = Json::array();
  for (const auto& e : g.edges())
    edges.push_back({{"source", e.source.str()},
                     {"target", e.target.str()},
                     {"kind", std::string(to_string(e.source.kind)) + "->" + to_string(e.target.kind)},
                     {"sign", e.sign},
                     {"cos", e.cos}});
  j["nodes"] = std::move(nodes);
  j["edges"] = std::move(edges);
  return j;
}

void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FilesystemError("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw FilesystemError("write failed for " + path.string());
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FilesystemError("cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

}  // namespace vsalens
