#include "vsalens/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <set>

#include "vsalens/ann.hpp"
#include "vsalens/explainer.hpp"
#include "vsalens/forward.hpp"
#include "vsalens/parallel.hpp"
#include "vsalens/random.hpp"
#include "vsalens/vsa.hpp"

namespace vsalens {

bool SelftestReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const SelftestCheck& c) { return c.passed; });
}

const SelftestCheck& SelftestReport::check(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return c;
  throw LookupError("no selftest check named " + name);
}

TransformerWeights random_mini_model(const ModelShape& shape, std::uint64_t seed, bool random_layernorm) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(shape.d_model));
  auto mat = [&](int r, int c, double sd) {
    Matrix m(r, c);
    for (auto& x : m.reshaped()) x = sd * normal(rng);
    return m;
  };
  auto vec = [&](int n, double mean, double sd) {
    Vector v(n);
    for (auto& x : v) x = mean + sd * normal(rng);
    return v;
  };
  auto ln = [&] {
    if (!random_layernorm) return LayerNormParams{Vector::Ones(shape.d_model), Vector::Zero(shape.d_model)};
    return LayerNormParams{vec(shape.d_model, 1.0, 0.2), vec(shape.d_model, 0.0, 0.1)};
  };
  const int hd = shape.n_heads * shape.d_head;
  TransformerWeights w;
  w.shape = shape;
  w.w_e = mat(shape.vocab, shape.d_model, 1.0);
  w.w_pos = mat(shape.n_ctx, shape.d_model, 0.3);
  for (int l = 0; l < shape.n_layers; ++l) {
    LayerWeights lw;
    lw.ln1 = ln();
    lw.w_q = mat(hd, shape.d_model, scale);
    lw.w_k = mat(hd, shape.d_model, scale);
    lw.w_v = mat(hd, shape.d_model, scale);
    lw.b_q = vec(hd, 0.0, 0.1);
    lw.b_k = vec(hd, 0.0, 0.1);
    lw.b_v = vec(hd, 0.0, 0.1);
    lw.w_o = mat(hd, shape.d_model, scale);
    lw.b_o = vec(shape.d_model, 0.0, 0.1);
    lw.ln2 = ln();
    lw.w_in = mat(shape.d_mlp, shape.d_model, scale);
    lw.b_in = vec(shape.d_mlp, 0.0, 0.1);
    lw.w_out = mat(shape.d_mlp, shape.d_model, 1.0 / std::sqrt(static_cast<double>(shape.d_mlp)));
    lw.b_out = vec(shape.d_model, 0.0, 0.1);
    w.layers.push_back(std::move(lw));
  }
  w.ln_f = ln();
  w.w_u = w.w_e;
  w.b_u = Vector::Zero(shape.vocab);
  validate(w);
  return w;
}

namespace {

using Clock = std::chrono::steady_clock;

template <typename Fn>
SelftestCheck timed(std::string name, Fn&& fn) {
  const auto t0 = Clock::now();
  SelftestCheck c;
  c.name = std::move(name);
  c.metrics = Json::object();
  fn(c);
  c.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return c;
}

ModelShape mini_shape() {
  ModelShape s;
  s.d_model = 16;
  s.n_layers = 2;
  s.n_heads = 2;
  s.d_head = 8;
  s.d_mlp = 64;
  s.vocab = 50;
  s.n_ctx = 16;
  return s;
}

std::vector<int> random_ids(int n, int vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, vocab - 1);
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (auto& t : ids) t = pick(rng);
  return ids;
}

double max_rel_diff(const Matrix& a, const Matrix& b) {
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace

SelftestCheck check_planted_recovery(const SelftestOptions& o) {
  return timed("planted_recovery", [&](SelftestCheck& c) {
    ExplainerConfig cfg;
    cfg.atom_kinds = {true, false, false};
    int exact = 0;
    double min_cos = 1.0;
    for (int trial = 0; trial < o.planted_trials; ++trial) {
      const std::uint64_t seed = o.seed * 1000003u + static_cast<std::uint64_t>(trial);
      Matrix pool = gaussian_matrix(o.planted_pool, o.planted_dim, seed);
      for (Eigen::Index i = 0; i < pool.rows(); ++i) pool.row(i).array() -= pool.row(i).mean();
      std::vector<AtomLabel> labels;
      for (int i = 0; i < o.planted_pool; ++i) labels.push_back(AtomLabel::token(i));
      const AtomTable atoms(pool, labels);

      const int k = 1 + trial % 10;
      std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
      std::vector<int> ids(static_cast<std::size_t>(o.planted_pool));
      for (int i = 0; i < o.planted_pool; ++i) ids[static_cast<std::size_t>(i)] = i;
      std::shuffle(ids.begin(), ids.end(), rng);
      std::set<int> planted(ids.begin(), ids.begin() + k);
      Vector w = Vector::Zero(o.planted_dim);
      for (int id : planted) w += atoms.vectors().row(id).transpose();

      std::vector<RankedAtom> cands;
      for (std::size_t i = 0; i < atoms.size(); ++i)
        cands.push_back({i, cosine(atoms.vectors().row(static_cast<Eigen::Index>(i)).transpose(), w)});
      rank_candidates(cands, atoms);
      const auto e = greedy_bundle(w, cands, atoms, cfg);
      std::set<int> got;
      for (const auto& m : e.members) got.insert(m.label.index);
      if (got == planted && e.bundle_cos > 0.99) ++exact;
      min_cos = std::min(min_cos, e.bundle_cos);
    }
    c.metrics["trials"] = o.planted_trials;
    c.metrics["exact"] = exact;
    c.metrics["min_bundle_cos"] = min_cos;
    c.passed = exact * 100 >= 99 * o.planted_trials;
  });
}

SelftestCheck check_binding_preservation(const SelftestOptions& o) {
  return timed("binding_preservation", [&](SelftestCheck& c) {
    const int dim = 768;
    const auto m = vsa::BindingMatrix::random(dim, o.seed + 1);
    const auto vs = vsa::sample_concept_vectors(200, dim, o.seed + 2);
    double drift = 0.0;
    double min_unbind = 1.0;
    std::vector<vsa::ConceptVector> bound;
    for (const auto& v : vs) bound.push_back(vsa::bind(m, v));
    for (std::size_t i = 0; i < vs.size(); ++i) {
      min_unbind = std::min(min_unbind, vsa::cosine(vsa::unbind(m, bound[i]), vs[i]));
      for (std::size_t j = i + 1; j < vs.size(); ++j)
        drift = std::max(drift, std::abs(vsa::cosine(bound[i], bound[j]) - vsa::cosine(vs[i], vs[j])));
    }
    c.metrics["dim"] = dim;
    c.metrics["max_cos_drift"] = drift;
    c.metrics["min_unbind_cos"] = min_unbind;
    c.metrics["max_offdiag_gram"] = m.max_offdiag_gram();
    c.passed = drift <= 0.05 && min_unbind > 0.9 && m.is_nearly_orthogonal();
  });
}

SelftestCheck check_boolean_gates(const SelftestOptions& o) {
  return timed("boolean_gates", [&](SelftestCheck& c) {
    const int dim = 768;
    const auto pool = vsa::sample_concept_vectors(8, dim, o.seed + 3);
    int cases = 0;
    int wrong = 0;
    auto input_of = [&](unsigned mask, int n) {
      auto x = vsa::ConceptVector::zeros(dim);
      for (int i = 0; i < n; ++i)
        if (mask & (1u << i)) x = x + pool[static_cast<std::size_t>(i)];
      return x;
    };
    for (int k = 1; k <= 4; ++k) {
      const std::span<const vsa::ConceptVector> atoms(pool.data(), static_cast<std::size_t>(k));
      const auto and_n = vsa::BooleanNeuron::make_and(atoms);
      const auto or_n = vsa::BooleanNeuron::make_or(atoms);
      // Inputs range over the gate's atoms plus two distractors.
      const int n = k + 2;
      for (unsigned mask = 0; mask < (1u << n); ++mask) {
        const auto x = input_of(mask, n);
        const unsigned own = mask & ((1u << k) - 1);
        const bool want_and = own == (1u << k) - 1;
        const bool want_or = own != 0;
        wrong += (vsa::boolean_neuron_eval(and_n, x) > 0.0) != want_and;
        wrong += (vsa::boolean_neuron_eval(or_n, x) > 0.0) != want_or;
        cases += 2;
      }
    }
    // present {0,1}, absent {2,3}
    const std::span<const vsa::ConceptVector> present(pool.data(), 2);
    const std::span<const vsa::ConceptVector> absent(pool.data() + 2, 2);
    const auto not_n = vsa::BooleanNeuron::make_not(present, absent);
    for (unsigned mask = 0; mask < 16u; ++mask) {
      const bool want = (mask & 3u) == 3u && (mask & 12u) == 0u;
      wrong += (vsa::boolean_neuron_eval(not_n, input_of(mask, 4)) > 0.0) != want;
      ++cases;
    }
    c.metrics["cases"] = cases;
    c.metrics["wrong"] = wrong;
    c.passed = wrong == 0;
  });
}

SelftestCheck check_or_set_superposition(const SelftestOptions& o) {
  return timed("or_set_superposition", [&](SelftestCheck& c) {
    const auto concepts = vsa::sample_concept_vectors(6, 768, o.seed + 4);
    const std::vector<std::vector<int>> sets{{0, 1, 2}, {3, 4, 5}};
    std::vector<std::vector<bool>> inputs;
    for (int a = -1; a < 3; ++a)
      for (int b = -1; b < 3; ++b) {
        std::vector<bool> in(6, false);
        if (a >= 0) in[static_cast<std::size_t>(a)] = true;
        if (b >= 0) in[static_cast<std::size_t>(3 + b)] = true;
        inputs.push_back(in);
      }
    const auto table = vsa::or_set_superposition_demo(concepts, sets, inputs, o.seed + 5);
    bool rejects_cooccurrence = false;
    try {
      vsa::or_set_superposition_demo(concepts, sets, {{true, true, false, false, false, false}}, o.seed + 5);
    } catch (const vsa::DemoAssumptionViolated&) {
      rejects_cooccurrence = true;
    }
    c.metrics["rows"] = table.rows.size();
    c.metrics["exact"] = table.exact;
    c.metrics["rejects_cooccurrence"] = rejects_cooccurrence;
    c.passed = table.exact && rejects_cooccurrence;
  });
}

SelftestCheck check_ann_recall(const SelftestOptions& o) {
  return timed("ann_recall", [&](SelftestCheck& c) {
    const Matrix data = gaussian_matrix(static_cast<Eigen::Index>(o.ann_atoms), o.ann_dim, o.seed + 6);
    std::vector<AtomLabel> labels;
    labels.reserve(o.ann_atoms);
    for (std::size_t i = 0; i < o.ann_atoms; ++i) labels.push_back(AtomLabel::token(static_cast<int>(i)));
    IndexParams params;
    params.seed = o.seed;
    params.construction_beam = o.ann_construction_beam;
    const auto index = AtomIndex::build(data, labels, params);
    const Matrix queries = gaussian_matrix(o.ann_queries, o.ann_dim, o.seed + 7);
    const int k = 10;
    std::vector<int> found(static_cast<std::size_t>(o.ann_queries), 0);
    parallel_for(static_cast<std::size_t>(o.ann_queries), o.threads, [&](std::size_t q) {
      const Vector v = queries.row(static_cast<Eigen::Index>(q)).transpose();
      const auto truth = brute_force_top_k(data, labels, v, k);
      const auto got = index.top_k(v, k);
      std::set<std::size_t> want;
      for (const auto& h : truth) want.insert(h.id);
      int hit = 0;
      for (const auto& h : got) hit += static_cast<int>(want.count(h.id));
      found[q] = hit;
    });
    long total = 0;
    for (int f : found) total += f;
    const double recall = static_cast<double>(total) / (static_cast<double>(o.ann_queries) * k);
    c.metrics["atoms"] = o.ann_atoms;
    c.metrics["dim"] = o.ann_dim;
    c.metrics["queries"] = o.ann_queries;
    c.metrics["construction_beam"] = o.ann_construction_beam;
    c.metrics["recall_at_10"] = recall;
    c.passed = recall >= 0.95;
  });
}

SelftestCheck check_fold_equivalence(const SelftestOptions& o) {
  return timed("fold_equivalence", [&](SelftestCheck& c) {
    const auto raw = random_mini_model(mini_shape(), o.seed + 8);
    const auto folded = fold_layernorm(raw);
    std::mt19937_64 rng(o.seed + 9);
    double worst = 0.0;
    for (int p = 0; p < 8; ++p) {
      const auto ids = random_ids(1 + p, raw.shape.vocab, rng);
      worst = std::max(worst, max_rel_diff(forward(raw, ids).logits, forward(folded, ids).logits));
    }
    c.metrics["max_rel_logit_diff"] = worst;
    c.passed = worst <= 1e-4;
  });
}

SelftestCheck check_forward_causality(const SelftestOptions& o) {
  return timed("forward_causality", [&](SelftestCheck& c) {
    const auto model = fold_layernorm(random_mini_model(mini_shape(), o.seed + 10));
    std::mt19937_64 rng(o.seed + 11);
    double prefix_drift = 0.0;
    double row_sum_err = 0.0;
    double upper_mass = 0.0;
    for (int trial = 0; trial < 8; ++trial) {
      auto ids = random_ids(10, model.shape().vocab, rng);
      const auto a = forward(model, ids, true);
      const int t = 1 + trial % 8;
      for (std::size_t i = static_cast<std::size_t>(t) + 1; i < ids.size(); ++i)
        ids[i] = (ids[i] + 1 + trial) % model.shape().vocab;
      const auto b = forward(model, ids);
      prefix_drift = std::max(prefix_drift, (a.logits.topRows(t + 1) - b.logits.topRows(t + 1)).cwiseAbs().maxCoeff());
      for (const auto& layer : a.attention)
        for (const auto& p : layer) {
          row_sum_err = std::max(row_sum_err, (p.rowwise().sum().array() - 1.0).abs().maxCoeff());
          upper_mass = std::max(upper_mass, p.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().cwiseAbs().maxCoeff());
        }
    }
    c.metrics["max_prefix_logit_drift"] = prefix_drift;
    c.metrics["max_attention_row_sum_error"] = row_sum_err;
    c.metrics["max_future_attention"] = upper_mass;
    c.passed = prefix_drift == 0.0 && row_sum_err < 1e-12 && upper_mass == 0.0;
  });
}

SelftestCheck check_ablation_locality(const SelftestOptions& o) {
  return timed("ablation_locality", [&](SelftestCheck& c) {
    const auto model = fold_layernorm(random_mini_model(mini_shape(), o.seed + 12));
    std::mt19937_64 rng(o.seed + 13);
    const auto ids = random_ids(8, model.shape().vocab, rng);
    const auto clean = forward(model, ids, true);
    double upstream_drift = 0.0;  // boundaries <= layer, any position
    double prefix_drift = 0.0;    // positions < p, every boundary
    double effect = 0.0;
    for (int layer = 0; layer < model.shape().n_layers; ++layer)
      for (int p = 0; p < static_cast<int>(ids.size()); p += 3) {
        const AblationSpec spec{layer, 5, AblationMode::ZeroActivation, {p}};
        const auto abl = forward(model, ids, true, std::span(&spec, 1));
        for (int b = 0; b <= layer; ++b)
          upstream_drift = std::max(upstream_drift, (clean.residuals[static_cast<std::size_t>(b)] -
                                                     abl.residuals[static_cast<std::size_t>(b)]).cwiseAbs().maxCoeff());
        for (std::size_t b = 0; b < clean.residuals.size(); ++b)
          if (p > 0)
            prefix_drift = std::max(prefix_drift,
                                    (clean.residuals[b].topRows(p) - abl.residuals[b].topRows(p)).cwiseAbs().maxCoeff());
        effect = std::max(effect, (clean.logits - abl.logits).cwiseAbs().maxCoeff());
      }
    // A neuron with zero input and output weights never changes anything.
    auto w = model.weights();
    w.layers[0].w_in.row(7).setZero();
    w.layers[0].b_in(7) = 0.0;
    w.layers[0].w_out.row(7).setZero();
    const auto dead = FoldedModel::from_folded(w);
    const auto d = logit_delta(dead, ids, 3, {0, 7, AblationMode::ZeroActivation, {}});
    c.metrics["max_upstream_drift"] = upstream_drift;
    c.metrics["max_prefix_drift"] = prefix_drift;
    c.metrics["max_logit_effect"] = effect;
    c.metrics["dead_neuron_delta"] = d.delta;
    c.passed = upstream_drift == 0.0 && prefix_drift == 0.0 && effect > 0.0 && d.delta == 0.0;
  });
}

SelftestCheck check_deterministic_output(const SelftestOptions& o) {
  return timed("deterministic_output", [&](SelftestCheck& c) {
    const auto model = fold_layernorm(random_mini_model(mini_shape(), o.seed + 14));
    const auto atoms = atom_table(model);
    ExplainerConfig cfg;
    cfg.atom_kinds = {true, true, true};
    auto dump = [&](int threads) {
      cfg.threads = threads;
      std::string s;
      for (int layer = 0; layer < model.shape().n_layers; ++layer) {
        const auto r = explain_layer(model, atoms, layer, cfg);
        for (const auto& e : r.explanations) s += to_json(e).dump() + "\n";
        s += to_json(r.coverage).dump() + "\n";
      }
      return s;
    };
    const std::string a = dump(1);
    const std::string b = dump(std::max(2, o.threads));
    const std::string again = dump(1);
    c.metrics["bytes"] = a.size();
    c.metrics["identical_across_threads"] = a == b;
    c.metrics["identical_across_runs"] = a == again;
    c.passed = a == b && a == again;
  });
}

SelftestReport run_selftest(const SelftestOptions& o) {
  SelftestReport r;
  r.checks.push_back(check_planted_recovery(o));
  r.checks.push_back(check_binding_preservation(o));
  r.checks.push_back(check_boolean_gates(o));
  r.checks.push_back(check_or_set_superposition(o));
  r.checks.push_back(check_ann_recall(o));
  r.checks.push_back(check_fold_equivalence(o));
  r.checks.push_back(check_forward_causality(o));
  r.checks.push_back(check_ablation_locality(o));
  r.checks.push_back(check_deterministic_output(o));
  return r;
}

Json to_json(const SelftestReport& r) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["passed"] = r.passed();
  Json checks = Json::array();
  for (const auto& c : r.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"metrics", c.metrics}});
  j["checks"] = std::move(checks);
  return j;
}

}  // namespace vsalens
