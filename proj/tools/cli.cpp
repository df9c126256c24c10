#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>

#include "CLI11.hpp"
#include "vsalens/circuit.hpp"
#include "vsalens/diagnostics.hpp"
#include "vsalens/explainer.hpp"
#include "vsalens/forward.hpp"
#include "vsalens/hashing.hpp"
#include "vsalens/json_io.hpp"
#include "vsalens/parallel.hpp"
#include "vsalens/selftest.hpp"
#include "vsalens/vocab.hpp"
#include "vsalens/vsa.hpp"

namespace vsalens::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

class NoCheckpointError : public Error {
 public:
  using Error::Error;
};

constexpr const char* kCheckpointHint =
    "hint: the checkpoint is not downloaded automatically. Export GPT-2 small once with\n"
    "  python3 tools/export_gpt2.py --out DIR\n"
    "then pass --checkpoint DIR/gpt2.safetensors --vocab DIR/vocab.json\n"
    "(or set VSALENS_CHECKPOINT / VSALENS_VOCAB).";

struct Common {
  std::string checkpoint;
  std::string vocab;
  std::string out;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct Loaded {
  FoldedModel model;
  std::optional<Vocabulary> vocab;
  std::string checkpoint_sha256;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path output_dir(const Common& c) {
  const fs::path dir = c.out.empty() ? fs::path("vsalens-out") : fs::path(c.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw FilesystemError("cannot create output directory " + dir.string());
  return dir;
}

void check_paths(const Common& c, bool need_checkpoint) {
  if (need_checkpoint) {
    if (c.checkpoint.empty()) throw NoCheckpointError("no checkpoint given (--checkpoint or VSALENS_CHECKPOINT)");
    if (!fs::is_regular_file(c.checkpoint)) throw NoCheckpointError("checkpoint not found: " + c.checkpoint);
  }
  if (!c.vocab.empty() && !fs::is_regular_file(c.vocab)) throw NoCheckpointError("vocabulary not found: " + c.vocab);
}

Loaded load(const Common& c) {
  std::cerr << "loading " << c.checkpoint << "\n";
  Loaded l{load_folded(c.checkpoint), std::nullopt, sha256_file(c.checkpoint)};
  if (!c.vocab.empty()) l.vocab = Vocabulary::load(c.vocab);
  if (l.vocab && static_cast<int>(l.vocab->size()) != l.model.weights().shape.vocab)
    std::cerr << "warning: vocabulary has " << l.vocab->size() << " tokens, model has "
              << l.model.weights().shape.vocab << "; unmatched ids print as tok:<id>\n";
  return l;
}

const Vocabulary* vocab_of(const Loaded& l) { return l.vocab ? &*l.vocab : nullptr; }

Json common_json(const Common& c) {
  Json j;
  j["checkpoint"] = c.checkpoint;
  j["vocab"] = c.vocab;
  j["out"] = c.out;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  return j;
}

void write_manifest(const fs::path& dir, const std::string& command, Json run_config, Json hashes) {
  Json m;
  m["schema_version"] = kSchemaVersion;
  m["command"] = command;
  m["run_config"] = std::move(run_config);
  m["hashes"] = std::move(hashes);
  m["created_at"] = utc_now();
  write_json(dir / ("manifest-" + command + ".json"), m);
}

std::string file_stem_for(const std::string& target) {
  return "gram_" + std::regex_replace(target, std::regex("[^A-Za-z0-9_]+"), "_");
}

// ---- diagnose ---------------------------------------------------------------

struct DiagnoseArgs {
  std::vector<std::string> targets;
  Eigen::Index cutout = 0;
  double threshold = 0.1;
  bool heatmap = false;
  std::string prompt_ids;
};

std::vector<std::string> expand_targets(const std::vector<std::string>& in, const ModelShape& s) {
  std::vector<std::string> out;
  for (const auto& t : in) {
    if (t == "all-heads") {
      for (int l = 0; l < s.n_layers; ++l)
        for (int h = 0; h < s.n_heads; ++h)
          for (const char* m : {"Q", "K", "V", "O"})
            out.push_back("attn:" + std::to_string(l) + "." + std::to_string(h) + "." + m);
    } else if (t == "all-mlp") {
      for (int l = 0; l < s.n_layers; ++l) out.push_back("mlp_out:" + std::to_string(l));
    } else {
      out.push_back(t);
    }
  }
  return out;
}

int run_diagnose(const Common& c, const DiagnoseArgs& a) {
  check_paths(c, true);
  if (!a.prompt_ids.empty() && !fs::is_regular_file(a.prompt_ids))
    throw UsageError("prompt-id file not found: " + a.prompt_ids);
  const fs::path dir = output_dir(c);
  const auto l = load(c);
  const auto targets = expand_targets(a.targets, l.model.shape());

  std::vector<std::string> grams;
  bool biases = false;
  bool means = false;
  for (const auto& t : targets) {
    if (t == "biases")
      biases = true;
    else if (t == "means")
      means = true;
    else
      grams.push_back(t);
  }
  for (const auto& t : grams) target_rows(l.model, t, 1);  // validates names before any heavy work

  Json report;
  report["schema_version"] = kSchemaVersion;
  std::vector<GramReport> reports(grams.size());
  parallel_for(grams.size(), c.threads, [&](std::size_t i) {
    const Eigen::Index rows = a.cutout > 0 ? a.cutout : (grams[i] == "embeddings" ? 4096 : 0);
    const auto g = gram(target_rows(l.model, grams[i], rows));
    reports[i] = diagonal_dominance(g.values, a.threshold, grams[i]);
    if (a.heatmap) heatmap_export(g.values, dir / file_stem_for(grams[i]));
  });
  Json gj = Json::array();
  for (const auto& r : reports) gj.push_back(to_json(r));
  report["grams"] = std::move(gj);

  if (biases) report["biases"] = to_json(bias_orthogonality(l.model));
  if (means) {
    const auto e = embedding_mean_stats(l.model);
    report["embedding_means"] = {{"mean_abs", e.mean_abs}, {"max_abs", e.max_abs}};
    if (!a.prompt_ids.empty()) report["residual_means"] = residual_mean_stats(l.model, read_prompt_ids(a.prompt_ids));
  }
  write_json(dir / "diagnose.json", report);

  Json rc = common_json(c);
  rc["targets"] = a.targets;
  rc["cutout"] = a.cutout;
  rc["threshold"] = a.threshold;
  rc["heatmap"] = a.heatmap;
  rc["prompt_ids"] = a.prompt_ids;
  write_manifest(dir, "diagnose", rc, {{"checkpoint_sha256", l.checkpoint_sha256}});
  return kExitOk;
}

// ---- explain ----------------------------------------------------------------

struct ExplainArgs {
  std::vector<int> layers;
  std::optional<int> neuron;
  std::string atoms;
  std::string config;
  std::string signed_mode = "auto";
  bool matching_pursuit = false;
  bool ann_shortlist = false;
};

ExplainerConfig explainer_config(const Common& c, const ExplainArgs& a) {
  ExplainerConfig cfg = a.config.empty() ? ExplainerConfig{} : explainer_config_from_json(read_json(a.config));
  if (!a.atoms.empty()) cfg.atom_kinds = AtomKinds::parse(a.atoms);
  if (a.signed_mode == "on")
    cfg.signed_members = true;
  else if (a.signed_mode == "off")
    cfg.signed_members = false;
  if (a.matching_pursuit) cfg.matching_pursuit = true;
  if (a.ann_shortlist) cfg.exact_shortlist = false;
  cfg.index.seed = c.seed;
  cfg.threads = c.threads;
  cfg.validate();
  return cfg;
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string member_text(const Member& m, const Vocabulary* vocab) {
  std::string s = (m.sign < 0 ? "-" : "+") + m.label.str();
  if (vocab && m.label.kind == AtomKind::Token && static_cast<std::size_t>(m.label.index) < vocab->size())
    s += "'" + vocab->decode(m.label.index) + "'";
  return s;
}

int run_explain(const Common& c, const ExplainArgs& a) {
  if (a.config.size() && !fs::is_regular_file(a.config)) throw UsageError("config file not found: " + a.config);
  if (a.neuron && a.layers.size() != 1) throw UsageError("--neuron needs exactly one --layer");
  auto cfg = explainer_config(c, a);
  check_paths(c, true);
  const fs::path dir = output_dir(c);
  const auto l = load(c);
  const auto& s = l.model.shape();
  for (int layer : a.layers)
    if (layer < 0 || layer >= s.n_layers) throw UsageError("layer out of range: " + std::to_string(layer));
  if (a.neuron && (*a.neuron < 0 || *a.neuron >= s.d_mlp))
    throw UsageError("neuron out of range: " + std::to_string(*a.neuron));

  const auto atoms = atom_table(l.model);
  const auto* vocab = vocab_of(l);
  write_json(dir / "explainer_config.json", to_json(cfg));

  for (int layer : a.layers) {
    std::cerr << "explaining layer " << layer << "\n";
    if (a.neuron) {
      const auto e = explain_single(l.model, atoms, layer, *a.neuron, cfg);
      write_json(dir / ("explanation_" + std::to_string(layer) + "_" + std::to_string(*a.neuron) + ".json"),
                 to_json(e, vocab));
      continue;
    }
    const auto r = explain_layer(l.model, atoms, layer, cfg);
    const std::string tag = std::to_string(layer);
    {
      std::ofstream out(dir / ("explanations_layer_" + tag + ".jsonl"), std::ios::trunc);
      for (const auto& e : r.explanations) out << to_json(e, vocab).dump() << "\n";
      if (!out) throw FilesystemError("write failed in " + dir.string());
    }
    {
      std::ofstream csv(dir / ("layer_" + tag + ".csv"), std::ios::trunc);
      csv << "neuron,bundle_cos,size,members\n";
      char buf[32];
      for (const auto& e : r.explanations) {
        std::string members;
        for (const auto& m : e.members) members += (members.empty() ? "" : " ") + member_text(m, vocab);
        std::snprintf(buf, sizeof buf, "%.6f", e.bundle_cos);
        csv << e.neuron << "," << buf << "," << e.members.size() << "," << csv_quote(members) << "\n";
      }
      if (!csv) throw FilesystemError("write failed in " + dir.string());
    }
    Json cov = to_json(r.coverage);
    cov["layer"] = layer;
    cov["config_hash"] = cfg.hash();
    write_json(dir / ("coverage_layer_" + tag + ".json"), cov);
    std::cerr << "layer " << layer << ": fraction >= 0.5 " << r.coverage.fraction_ge_0_5 << ", >= 0.3 "
              << r.coverage.fraction_ge_0_3 << "\n";
  }

  Json rc = common_json(c);
  rc["layers"] = a.layers;
  rc["neuron"] = a.neuron ? Json(*a.neuron) : Json(nullptr);
  rc["explainer"] = to_json(cfg);
  write_manifest(dir, "explain", rc,
                 {{"checkpoint_sha256", l.checkpoint_sha256}, {"atom_table", content_hash(atoms)}});
  return kExitOk;
}

// ---- circuits ---------------------------------------------------------------

struct CircuitArgs {
  std::string explanations;
  bool unembed = false;
  std::string dot = "graph.dot";
  std::optional<double> min_cos;
  int unembed_top = 20;
  std::string trace_node;
  int depth = 2;
  std::string direction = "upstream";
};

std::vector<Explanation> read_explanations(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("explanations_layer_", 0) == 0 || name.rfind("explanation_", 0) == 0) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Explanation> out;
  for (const auto& f : files) {
    if (f.extension() == ".jsonl") {
      std::ifstream in(f);
      for (std::string line; std::getline(in, line);)
        if (!line.empty()) out.push_back(explanation_from_json(Json::parse(line)));
    } else {
      out.push_back(explanation_from_json(read_json(f)));
    }
  }
  return out;
}

int run_circuits(const Common& c, const CircuitArgs& a) {
  const fs::path dir(a.explanations);
  if (!fs::is_directory(dir)) throw UsageError("explanations directory not found: " + a.explanations);
  if (!fs::is_regular_file(dir / "explainer_config.json"))
    throw UsageError("no explainer_config.json in " + a.explanations);
  if (a.direction != "upstream" && a.direction != "downstream")
    throw UsageError("--direction must be upstream or downstream");
  std::optional<NodeId> focus;
  if (!a.trace_node.empty()) {
    try {
      focus = NodeId::parse(a.trace_node);
    } catch (const ArgumentError& e) {
      throw UsageError(e.what());
    }
  }
  check_paths(c, a.unembed);
  const auto cfg = explainer_config_from_json(read_json(dir / "explainer_config.json"));
  const auto explanations = read_explanations(dir);

  std::optional<Loaded> l;
  std::optional<Vocabulary> labels_only;
  if (a.unembed)
    l.emplace(load(c));
  else if (!c.vocab.empty())
    labels_only = Vocabulary::load(c.vocab);
  const Vocabulary* vocab = l ? vocab_of(*l) : labels_only ? &*labels_only : nullptr;

  GraphConfig gc;
  gc.unembed_links = a.unembed;
  gc.min_cos = a.min_cos;
  gc.unembed_top = a.unembed_top;
  auto graph = build_graph(explanations, cfg, gc, a.unembed ? &l->model : nullptr);
  if (focus)
    graph = trace(graph, *focus, a.depth, a.direction == "upstream" ? Direction::Upstream : Direction::Downstream);

  fs::path dot(a.dot);
  const fs::path out_dir = dot.has_parent_path() ? dot.parent_path() : fs::path(".");
  fs::create_directories(out_dir);
  export_dot(graph, dot, vocab);
  fs::path json_path = dot;
  json_path.replace_extension(".json");
  write_json(json_path, to_json(graph, vocab));
  std::cerr << "graph: " << graph.nodes().size() << " nodes, " << graph.edges().size() << " edges\n";

  Json rc = common_json(c);
  rc["explanations"] = a.explanations;
  rc["unembed"] = a.unembed;
  rc["dot"] = a.dot;
  rc["min_cos"] = a.min_cos ? Json(*a.min_cos) : Json(nullptr);
  rc["unembed_top"] = a.unembed_top;
  rc["trace"] = a.trace_node;
  rc["depth"] = a.depth;
  rc["direction"] = a.direction;
  Json hashes = {{"explainer_config", cfg.hash()}};
  if (a.unembed) hashes["checkpoint_sha256"] = l->checkpoint_sha256;
  write_manifest(out_dir, "circuits", rc, hashes);
  return kExitOk;
}

// ---- ablate -----------------------------------------------------------------

struct AblateArgs {
  int layer = 0;
  int neuron = 0;
  std::string prompt_ids;
  int target_id = 0;
  std::vector<int> positions;
};

int run_ablate(const Common& c, const AblateArgs& a) {
  if (!fs::is_regular_file(a.prompt_ids)) throw UsageError("prompt-id file not found: " + a.prompt_ids);
  check_paths(c, true);
  const auto prompts = read_prompt_ids(a.prompt_ids);
  const fs::path dir = output_dir(c);
  const auto l = load(c);
  const AblationSpec spec{a.layer, a.neuron, AblationMode::ZeroActivation, a.positions};
  Json results = Json::array();
  for (const auto& p : prompts) {
    const auto d = logit_delta(l.model, p, a.target_id, spec);
    results.push_back(
        {{"prompt_ids", p}, {"clean_logit", d.clean_logit}, {"ablated_logit", d.ablated_logit}, {"delta", d.delta}});
  }
  Json out;
  out["schema_version"] = kSchemaVersion;
  out["layer"] = a.layer;
  out["neuron"] = a.neuron;
  out["target_id"] = a.target_id;
  if (l.vocab && static_cast<std::size_t>(a.target_id) < l.vocab->size()) out["target"] = l.vocab->decode(a.target_id);
  out["positions"] = a.positions;
  out["results"] = std::move(results);
  write_json(dir / "ablation.json", out);

  Json rc = common_json(c);
  rc["layer"] = a.layer;
  rc["neuron"] = a.neuron;
  rc["prompt_ids"] = a.prompt_ids;
  rc["target_id"] = a.target_id;
  rc["positions"] = a.positions;
  write_manifest(dir, "ablate", rc,
                 {{"checkpoint_sha256", l.checkpoint_sha256}, {"prompt_ids_sha256", sha256_file(a.prompt_ids)}});
  return kExitOk;
}

// ---- vsa-demo ---------------------------------------------------------------

Json vsa_demo(int dim, std::uint64_t seed) {
  using namespace vsa;
  const auto atoms = sample_concept_vectors(4, dim, seed);
  const std::span<const ConceptVector> ab(atoms.data(), 2);
  const std::span<const ConceptVector> c(atoms.data() + 2, 1);
  const auto and_n = BooleanNeuron::make_and(ab);
  const auto or_n = BooleanNeuron::make_or(ab);
  const auto not_n = BooleanNeuron::make_not(ab, c);

  Json gates = Json::array();
  for (unsigned mask = 0; mask < 8u; ++mask) {
    auto x = ConceptVector::zeros(dim);
    for (int i = 0; i < 3; ++i)
      if (mask & (1u << i)) x = x + atoms[static_cast<std::size_t>(i)];
    gates.push_back({{"a", bool(mask & 1u)},
                     {"b", bool(mask & 2u)},
                     {"c", bool(mask & 4u)},
                     {"and_ab", boolean_neuron_eval(and_n, x)},
                     {"or_ab", boolean_neuron_eval(or_n, x)},
                     {"ab_and_not_c", boolean_neuron_eval(not_n, x)}});
  }

  const auto m = BindingMatrix::random(dim, seed + 1);
  const auto pool = sample_concept_vectors(64, dim, seed + 2);
  double drift = 0.0;
  double unbind_min = 1.0;
  double max_cos = 0.0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    unbind_min = std::min(unbind_min, cosine(unbind(m, bind(m, pool[i])), pool[i]));
    for (std::size_t j = i + 1; j < pool.size(); ++j) {
      max_cos = std::max(max_cos, std::abs(cosine(pool[i], pool[j])));
      drift = std::max(drift, std::abs(cosine(bind(m, pool[i]), bind(m, pool[j])) - cosine(pool[i], pool[j])));
    }
  }
  const int signs[] = {1, 1, 1};
  const auto b = bundle(std::span(pool.data(), 3), signs);
  const MembershipThreshold lambda(0.5);
  int false_members = 0;
  for (std::size_t i = 3; i < pool.size(); ++i) false_members += contains(b, pool[i], lambda);

  Json j;
  j["schema_version"] = kSchemaVersion;
  j["dim"] = dim;
  j["seed"] = seed;
  j["gates"] = std::move(gates);
  j["binding"] = {{"pairs", pool.size() * (pool.size() - 1) / 2},
                  {"max_abs_cos_before", max_cos},
                  {"max_cos_drift", drift},
                  {"min_unbind_cos", unbind_min},
                  {"max_offdiag_gram", m.max_offdiag_gram()}};
  j["bundling"] = {{"members", 3},
                   {"lambda", lambda.lambda()},
                   {"member_dots", {dot(b, pool[0]), dot(b, pool[1]), dot(b, pool[2])}},
                   {"false_members_of_61", false_members}};
  return j;
}

// ---- selftest ---------------------------------------------------------------

int run_selftest(const Common& c, bool quick) {
  SelftestOptions o;
  o.seed = c.seed;
  o.threads = c.threads;
  if (quick) {
    o.planted_trials = 20;
    o.ann_atoms = 20000;
  }
  const auto r = run_selftest(o);
  for (const auto& ch : r.checks) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2fs", ch.seconds);
    std::cerr << (ch.passed ? "PASS " : "FAIL ") << ch.name << " (" << buf << ") " << ch.metrics.dump() << "\n";
  }
  if (!c.out.empty()) {
    const fs::path dir = output_dir(c);
    write_json(dir / "selftest.json", to_json(r));
    Json rc = common_json(c);
    rc["quick"] = quick;
    write_manifest(dir, "selftest", rc, Json::object());
  }
  return r.passed() ? kExitOk : kExitFailure;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"vsalens: nearly-orthogonal vector analysis of GPT-2 weights"};
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  app.add_option("--checkpoint", c.checkpoint, "GPT-2 safetensors checkpoint")->envname("VSALENS_CHECKPOINT");
  app.add_option("--vocab", c.vocab, "vocabulary JSON (token -> id)")->envname("VSALENS_VOCAB");
  app.add_option("--out", c.out, "output directory");
  app.add_option("--seed", c.seed, "random seed");
  app.add_option("--threads", c.threads, "worker threads")->envname("VSALENS_THREADS")->check(CLI::PositiveNumber);

  DiagnoseArgs da;
  auto* diagnose = app.add_subcommand("diagnose", "Gram-matrix and bias orthogonality diagnostics");
  diagnose
      ->add_option("--target", da.targets,
                   "embeddings | attn:L.H.{Q|K|V|O} | mlp_out:L | all-heads | all-mlp | biases | means")
      ->required();
  diagnose->add_option("--cutout", da.cutout, "rows kept per Gram (embeddings default 4096)");
  diagnose->add_option("--threshold", da.threshold, "off-diagonal threshold");
  diagnose->add_flag("--heatmap", da.heatmap, "write PGM/CSV heatmaps");
  diagnose->add_option("--prompt-ids", da.prompt_ids, "prompt file for residual means");

  ExplainArgs ea;
  auto* explain = app.add_subcommand("explain", "greedy bundled explanations of MLP input weights");
  explain->add_option("--layer", ea.layers, "layer(s)")->required();
  explain->add_option("--neuron", ea.neuron, "single neuron");
  explain->add_option("--atoms", ea.atoms, "comma list of token,attn,mlp");
  explain->add_option("--config", ea.config, "explainer config JSON");
  explain->add_option("--signed", ea.signed_mode, "auto | on | off")->check(CLI::IsMember({"auto", "on", "off"}));
  explain->add_flag("--matching-pursuit", ea.matching_pursuit, "re-rank against the residual");
  explain->add_flag("--ann-shortlist", ea.ann_shortlist, "HNSW shortlist instead of the exact scan");

  CircuitArgs ca;
  auto* circuits = app.add_subcommand("circuits", "assemble explanations into a circuit graph");
  circuits->add_option("--explanations", ca.explanations, "directory written by explain")->required();
  circuits->add_flag("--unembed", ca.unembed, "add links to token unembeddings");
  circuits->add_option("--dot", ca.dot, "DOT output path (JSON written alongside)");
  circuits->add_option("--min-cos", ca.min_cos, "edge threshold override");
  circuits->add_option("--unembed-top", ca.unembed_top, "unembed links kept per neuron")->check(CLI::PositiveNumber);
  circuits->add_option("--trace", ca.trace_node, "restrict to the neighbourhood of a node, e.g. mlp:7.1321");
  circuits->add_option("--depth", ca.depth, "trace depth")->check(CLI::NonNegativeNumber);
  circuits->add_option("--direction", ca.direction, "upstream | downstream");

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "zero one MLP neuron and report the target logit change");
  ablate->add_option("--layer", aa.layer)->required();
  ablate->add_option("--neuron", aa.neuron)->required();
  ablate->add_option("--prompt-ids", aa.prompt_ids, "one token-id sequence per line")->required();
  ablate->add_option("--target-id", aa.target_id)->required();
  ablate->add_option("--positions", aa.positions, "positions to ablate (default all)");

  int demo_dim = 768;
  auto* demo = app.add_subcommand("vsa-demo", "print boolean-gate and binding property tables");
  demo->add_option("--dim", demo_dim)->check(CLI::Range(2, 1 << 16));

  bool quick = false;
  auto* selftest = app.add_subcommand("selftest", "synthetic oracle suite (no checkpoint needed)");
  selftest->add_flag("--quick", quick, "smaller sizes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*diagnose) return run_diagnose(c, da);
    if (*explain) return run_explain(c, ea);
    if (*circuits) return run_circuits(c, ca);
    if (*ablate) return run_ablate(c, aa);
    if (*demo) {
      std::cout << vsa_demo(demo_dim, c.seed).dump(2) << "\n";
      return kExitOk;
    }
    if (*selftest) return run_selftest(c, quick);
  } catch (const NoCheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n" << kCheckpointHint << "\n";
    return kExitNoCheckpoint;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace vsalens::cli
