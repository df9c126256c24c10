#include "vsalens/explainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vsalens/hashing.hpp"
#include "vsalens/parallel.hpp"

namespace vsalens {

namespace {

constexpr Eigen::Index kAtomBlock = 2048;
constexpr std::size_t kNeuronChunk = 256;

Vector unit(const Vector& v) {
  const double n = v.norm();
  return n > 0.0 ? Vector(v / n) : v;
}

// Atom row as used inside bundles.
Vector bundle_atom(const AtomTable& atoms, std::size_t row, bool normalize) {
  Vector a = atoms.vectors().row(static_cast<Eigen::Index>(row)).transpose();
  return normalize ? unit(a) : a;
}

struct BundleState {
  Vector sum;
  double dot_w = 0.0;   // <sum, w_hat>
  double sq_norm = 0.0;  // <sum, sum>
  double cos = 0.0;

  explicit BundleState(Eigen::Index dim) : sum(Vector::Zero(dim)) {}
};

struct Tentative {
  double dot_w;
  double sq_norm;
  double cos;
};

Tentative try_add(const BundleState& s, const Vector& a, double a_dot_w, int sign) {
  Tentative t;
  t.dot_w = s.dot_w + sign * a_dot_w;
  t.sq_norm = s.sq_norm + 2.0 * sign * a.dot(s.sum) + a.squaredNorm();
  t.cos = t.sq_norm > 0.0 ? t.dot_w / std::sqrt(t.sq_norm) : 0.0;
  return t;
}

Verdict judge(double atom_cos, double new_cos, double cur_cos, const ExplainerConfig& cfg) {
  if (std::abs(atom_cos) < cfg.min_atom_cos) return Verdict::BelowMinCos;
  if (!(new_cos > cur_cos)) return Verdict::NoGain;
  if (std::abs(atom_cos) < cfg.weak_atom_cos && !(new_cos - cur_cos > cfg.min_gain)) return Verdict::WeakGain;
  return Verdict::Accepted;
}

std::vector<std::size_t> eligible_rows(const AtomTable& atoms, int layer, const AtomKinds& kinds) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < atoms.size(); ++i)
    if (eligible(atoms.labels()[i], layer, kinds)) rows.push_back(i);
  return rows;
}

// Rows [begin, end) of `rows` as a dense block (a view when contiguous).
Matrix gather(const AtomTable& atoms, const std::vector<std::size_t>& rows, std::size_t begin, std::size_t end) {
  const auto len = static_cast<Eigen::Index>(end - begin);
  if (rows[end - 1] - rows[begin] + 1 == end - begin)
    return atoms.vectors().middleRows(static_cast<Eigen::Index>(rows[begin]), len);
  Matrix m(len, atoms.dim());
  for (std::size_t i = begin; i < end; ++i)
    m.row(static_cast<Eigen::Index>(i - begin)) = atoms.vectors().row(static_cast<Eigen::Index>(rows[i]));
  return m;
}

Matrix unit_rows(const Matrix& m) {
  Matrix u = m;
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double n = u.row(i).norm();
    if (n > 0.0) u.row(i) /= n;
  }
  return u;
}

// Cosines of the atom block against the unit neuron rows.
Matrix block_cosines(const Matrix& block, const Matrix& unit_neurons) {
  Matrix c = block * unit_neurons.transpose();
  for (Eigen::Index i = 0; i < block.rows(); ++i) {
    const double n = block.row(i).norm();
    if (n > 0.0)
      c.row(i) /= n;
    else
      c.row(i).setZero();
  }
  return c;
}

Explanation empty_explanation(int layer, int neuron, const std::string& hash) {
  Explanation e;
  e.layer = layer;
  e.neuron = neuron;
  e.config_hash = hash;
  return e;
}

Explanation scan_static(const Vector& w_hat, std::span<const RankedAtom> cands, const AtomTable& atoms,
                        const ExplainerConfig& cfg) {
  Explanation e;
  BundleState s(w_hat.size());
  const bool sgn = cfg.is_signed();
  for (const auto& cand : cands) {
    if (static_cast<int>(e.members.size()) >= cfg.max_bundle) break;
    const AtomLabel& label = atoms.labels()[cand.atom];
    const Vector a = bundle_atom(atoms, cand.atom, cfg.normalize_atoms);
    const double atom_cos = cosine(a, w_hat);
    const int sign = sgn && atom_cos < 0.0 ? -1 : 1;
    if (std::abs(atom_cos) < cfg.min_atom_cos) {
      e.trace.push_back({label, sign, atom_cos, s.cos, Verdict::BelowMinCos});
      continue;
    }
    const Tentative t = try_add(s, a, a.dot(w_hat), sign);
    const Verdict v = judge(atom_cos, t.cos, s.cos, cfg);
    e.trace.push_back({label, sign, atom_cos, t.cos, v});
    if (v != Verdict::Accepted) continue;
    s.sum += sign * a;
    s.dot_w = t.dot_w;
    s.sq_norm = t.sq_norm;
    s.cos = t.cos;
    e.members.push_back({label, sign, atom_cos});
  }
  e.bundle_cos = e.members.empty() ? 0.0 : cosine(s.sum, w_hat);
  return e;
}

Explanation scan_matching_pursuit(const Vector& w_hat, std::span<const RankedAtom> cands, const AtomTable& atoms,
                                  const ExplainerConfig& cfg) {
  Explanation e;
  BundleState s(w_hat.size());
  const bool sgn = cfg.is_signed();
  struct Pending {
    std::size_t atom;
    Vector unit;
    double unit_dot_w;
    double unit_dot_sum;
  };
  std::vector<Pending> pending;
  pending.reserve(cands.size());
  for (const auto& c : cands) {
    Vector u = bundle_atom(atoms, c.atom, true);
    const double dw = u.dot(w_hat);
    pending.push_back({c.atom, std::move(u), dw, 0.0});
  }
  while (!pending.empty() && static_cast<int>(e.members.size()) < cfg.max_bundle) {
    // Residual r = w_hat - (<sum,w>/<sum,sum>) sum; score |<u, r>|.
    const double alpha = s.sq_norm > 0.0 ? s.dot_w / s.sq_norm : 0.0;
    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      const double score = std::abs(pending[i].unit_dot_w - alpha * pending[i].unit_dot_sum);
      if (score > best_score ||
          (score == best_score && atoms.labels()[pending[i].atom] < atoms.labels()[pending[best].atom])) {
        best = i;
        best_score = score;
      }
    }
    const std::size_t atom = pending[best].atom;
    pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(best));

    const AtomLabel& label = atoms.labels()[atom];
    const Vector a = bundle_atom(atoms, atom, cfg.normalize_atoms);
    const double atom_cos = cosine(a, w_hat);
    const int sign = sgn && atom_cos < 0.0 ? -1 : 1;
    if (std::abs(atom_cos) < cfg.min_atom_cos) {
      e.trace.push_back({label, sign, atom_cos, s.cos, Verdict::BelowMinCos});
      continue;
    }
    const Tentative t = try_add(s, a, a.dot(w_hat), sign);
    const Verdict v = judge(atom_cos, t.cos, s.cos, cfg);
    e.trace.push_back({label, sign, atom_cos, t.cos, v});
    if (v != Verdict::Accepted) continue;
    s.sum += sign * a;
    s.dot_w = t.dot_w;
    s.sq_norm = t.sq_norm;
    s.cos = t.cos;
    e.members.push_back({label, sign, atom_cos});
    for (auto& p : pending) p.unit_dot_sum += sign * p.unit.dot(a);
  }
  e.bundle_cos = e.members.empty() ? 0.0 : cosine(s.sum, w_hat);
  return e;
}

}  // namespace

AtomKinds AtomKinds::parse(const std::string& csv) {
  AtomKinds k{false, false, false};
  std::stringstream ss(csv);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item == "token")
      k.token = true;
    else if (item == "attn")
      k.attn = true;
    else if (item == "mlp")
      k.mlp = true;
    else
      throw ArgumentError("unknown atom kind '" + item + "' (expected token, attn, mlp)");
  }
  if (!k.token && !k.attn && !k.mlp) throw ArgumentError("no atom kinds selected");
  return k;
}

std::string AtomKinds::str() const {
  std::string s;
  auto add = [&s](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += ",";
    s += name;
  };
  add(token, "token");
  add(attn, "attn");
  add(mlp, "mlp");
  return s;
}

void ExplainerConfig::validate() const {
  if (!(min_atom_cos > 0.0 && min_atom_cos <= weak_atom_cos && weak_atom_cos < 1.0))
    throw ArgumentError("explainer config: need 0 < min_atom_cos <= weak_atom_cos < 1");
  if (!(min_gain > 0.0)) throw ArgumentError("explainer config: min_gain must be > 0");
  if (shortlist_k < 1) throw ArgumentError("explainer config: shortlist_k must be >= 1");
  if (max_bundle < 1) throw ArgumentError("explainer config: max_bundle must be >= 1");
  if (!atom_kinds.token && !atom_kinds.attn && !atom_kinds.mlp)
    throw ArgumentError("explainer config: no atom kinds selected");
}

std::string ExplainerConfig::hash() const {
  const nlohmann::json j = {{"min_atom_cos", min_atom_cos},
                            {"weak_atom_cos", weak_atom_cos},
                            {"min_gain", min_gain},
                            {"shortlist_k", shortlist_k},
                            {"max_bundle", max_bundle},
                            {"atom_kinds", atom_kinds.str()},
                            {"signed", is_signed()},
                            {"matching_pursuit", matching_pursuit},
                            {"normalize_atoms", normalize_atoms},
                            {"exact_shortlist", exact_shortlist},
                            {"index", {index.degree, index.construction_beam, index.query_beam, index.seed}}};
  return sha256_hex(j.dump()).substr(0, 16);
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Accepted: return "accepted";
    case Verdict::BelowMinCos: return "below_min_cos";
    case Verdict::NoGain: return "no_gain";
    case Verdict::WeakGain: return "weak_gain";
  }
  return "?";
}

bool eligible(const AtomLabel& atom, int layer, const AtomKinds& kinds) {
  switch (atom.kind) {
    case AtomKind::Token: return kinds.token;
    case AtomKind::AttnOut: return kinds.attn && atom.layer <= layer;
    case AtomKind::MlpOut: return kinds.mlp && atom.layer < layer;
  }
  return false;
}

void rank_candidates(std::vector<RankedAtom>& cands, const AtomTable& atoms) {
  std::sort(cands.begin(), cands.end(), [&atoms](const RankedAtom& a, const RankedAtom& b) {
    const double x = std::abs(a.cos);
    const double y = std::abs(b.cos);
    if (x != y) return x > y;
    return atoms.labels()[a.atom] < atoms.labels()[b.atom];
  });
}

Matrix neuron_weights(const FoldedModel& model, int layer) {
  if (layer < 0 || layer >= model.shape().n_layers)
    throw ArgumentError("layer " + std::to_string(layer) + " out of range");
  Matrix w = model.weights().layers[static_cast<std::size_t>(layer)].w_in;
  for (Eigen::Index i = 0; i < w.rows(); ++i) w.row(i).array() -= w.row(i).mean();
  return w;
}

std::vector<std::vector<RankedAtom>> candidate_shortlist(const AtomIndex& neuron_index, const AtomTable& atoms,
                                                         int layer, const ExplainerConfig& cfg) {
  cfg.validate();
  if (atoms.size() == 0) throw ArgumentError("candidate_shortlist: empty atom set");
  const auto rows = eligible_rows(atoms, layer, cfg.atom_kinds);
  if (rows.empty()) throw ArgumentError("candidate_shortlist: no eligible atoms for layer " + std::to_string(layer));
  if (neuron_index.dim() != atoms.dim()) throw ArgumentError("candidate_shortlist: index/atom dim mismatch");

  std::vector<std::vector<RankedAtom>> lists(neuron_index.size());
  const bool sgn = cfg.is_signed();
  for (std::size_t r : rows) {
    const Vector a = atoms.vectors().row(static_cast<Eigen::Index>(r)).transpose();
    std::vector<Hit> hits = neuron_index.top_k(a, cfg.shortlist_k);
    if (sgn) {
      // Most similar by |cos|: merge the hits for +a and -a.
      for (const Hit& h : neuron_index.top_k(-a, cfg.shortlist_k)) hits.push_back({h.id, h.label, -h.cosine});
      std::sort(hits.begin(), hits.end(), [](const Hit& x, const Hit& y) {
        if (std::abs(x.cosine) != std::abs(y.cosine)) return std::abs(x.cosine) > std::abs(y.cosine);
        return x.label < y.label;
      });
      hits.erase(std::unique(hits.begin(), hits.end(), [](const Hit& x, const Hit& y) { return x.id == y.id; }),
                 hits.end());
      if (hits.size() > static_cast<std::size_t>(cfg.shortlist_k)) hits.resize(static_cast<std::size_t>(cfg.shortlist_k));
    }
    for (const Hit& h : hits)
      if (std::abs(h.cosine) >= cfg.min_atom_cos) lists[h.id].push_back({r, h.cosine});
  }
  for (auto& l : lists) rank_candidates(l, atoms);
  return lists;
}

Explanation greedy_bundle(const Vector& weight, std::span<const RankedAtom> candidates, const AtomTable& atoms,
                          const ExplainerConfig& cfg) {
  cfg.validate();
  if (weight.size() != atoms.dim()) throw ArgumentError("greedy_bundle: weight/atom dim mismatch");
  const Vector c = centered(weight);
  const double n = c.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw DegenerateInputError("greedy_bundle: zero (or constant) weight vector");
  const Vector w_hat = c / n;
  Explanation e = cfg.matching_pursuit ? scan_matching_pursuit(w_hat, candidates, atoms, cfg)
                                       : scan_static(w_hat, candidates, atoms, cfg);
  e.config_hash = cfg.hash();
  return e;
}

double recompute_bundle_cos(const Explanation& e, const Vector& weight, const AtomTable& atoms,
                            const ExplainerConfig& cfg) {
  if (e.members.empty()) return 0.0;
  Vector sum = Vector::Zero(atoms.dim());
  for (const auto& m : e.members) sum += m.sign * bundle_atom(atoms, atoms.find(m.label), cfg.normalize_atoms);
  return cosine(sum, centered(weight));
}

CoverageStats coverage_of(const std::vector<Explanation>& explanations, int max_bundle) {
  CoverageStats c;
  c.neurons = static_cast<int>(explanations.size());
  c.size_histogram.assign(static_cast<std::size_t>(max_bundle + 1), 0);
  if (explanations.empty()) return c;
  int ge3 = 0;
  int ge5 = 0;
  int le40 = 0;
  double sum = 0.0;
  for (const auto& e : explanations) {
    if (e.bundle_cos >= 0.3) ++ge3;
    if (e.bundle_cos >= 0.5) ++ge5;
    if (e.members.size() <= 40) ++le40;
    sum += e.bundle_cos;
    const auto size = std::min(e.members.size(), c.size_histogram.size() - 1);
    ++c.size_histogram[size];
  }
  const double n = static_cast<double>(explanations.size());
  c.fraction_ge_0_3 = ge3 / n;
  c.fraction_ge_0_5 = ge5 / n;
  c.mean_bundle_cos = sum / n;
  c.fraction_size_le_40 = le40 / n;
  return c;
}

LayerExplanations explain_layer(const FoldedModel& model, const AtomTable& atoms, int layer,
                                const ExplainerConfig& cfg, std::span<const int> only) {
  cfg.validate();
  const Matrix weights = neuron_weights(model, layer);
  const auto n_neurons = static_cast<std::size_t>(weights.rows());
  std::vector<int> targets(only.begin(), only.end());
  if (targets.empty())
    for (std::size_t i = 0; i < n_neurons; ++i) targets.push_back(static_cast<int>(i));
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= n_neurons) throw ArgumentError("neuron " + std::to_string(t) + " out of range");
  const std::string hash = cfg.hash();

  LayerExplanations out;
  out.layer = layer;
  out.explanations.resize(targets.size());

  if (!cfg.exact_shortlist) {
    std::vector<AtomLabel> labels;
    for (std::size_t i = 0; i < n_neurons; ++i) labels.push_back(AtomLabel::mlp(layer, static_cast<int>(i)));
    const AtomIndex index = AtomIndex::build(weights, labels, cfg.index);
    const auto lists = candidate_shortlist(index, atoms, layer, cfg);
    parallel_for(targets.size(), cfg.threads, [&](std::size_t i) {
      const int n = targets[i];
      try {
        out.explanations[i] = greedy_bundle(weights.row(n).transpose(), lists[static_cast<std::size_t>(n)], atoms, cfg);
      } catch (const DegenerateInputError&) {
        out.explanations[i] = empty_explanation(layer, n, hash);
      }
      out.explanations[i].layer = layer;
      out.explanations[i].neuron = n;
    });
    out.coverage = coverage_of(out.explanations, cfg.max_bundle);
    return out;
  }

  const auto rows = eligible_rows(atoms, layer, cfg.atom_kinds);
  if (rows.empty()) throw ArgumentError("explain_layer: no eligible atoms for layer " + std::to_string(layer));
  const Matrix unit_neurons = unit_rows(weights);
  const bool sgn = cfg.is_signed();
  const auto k = static_cast<std::size_t>(cfg.shortlist_k);

  // Pass 1: each atom's k-th best neuron score, the inclusion threshold.
  std::vector<double> threshold(rows.size(), -std::numeric_limits<double>::infinity());
  const std::size_t n_blocks = (rows.size() + kAtomBlock - 1) / kAtomBlock;
  if (k < n_neurons) {
    parallel_for(n_blocks, cfg.threads, [&](std::size_t b) {
      const std::size_t begin = b * kAtomBlock;
      const std::size_t end = std::min(rows.size(), begin + kAtomBlock);
      const Matrix c = block_cosines(gather(atoms, rows, begin, end), unit_neurons);
      std::vector<double> scores(n_neurons);
      for (Eigen::Index i = 0; i < c.rows(); ++i) {
        for (std::size_t j = 0; j < n_neurons; ++j) {
          const double v = c(i, static_cast<Eigen::Index>(j));
          scores[j] = sgn ? std::abs(v) : v;
        }
        std::nth_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(k - 1), scores.end(),
                         std::greater<>());
        threshold[begin + static_cast<std::size_t>(i)] = scores[k - 1];
      }
    });
  }

  // Pass 2: invert per neuron chunk, then run the greedy scan.
  const std::size_t n_chunks = (targets.size() + kNeuronChunk - 1) / kNeuronChunk;
  parallel_for(n_chunks, cfg.threads, [&](std::size_t chunk) {
    const std::size_t t0 = chunk * kNeuronChunk;
    const std::size_t t1 = std::min(targets.size(), t0 + kNeuronChunk);
    Matrix sub(static_cast<Eigen::Index>(t1 - t0), unit_neurons.cols());
    for (std::size_t t = t0; t < t1; ++t) sub.row(static_cast<Eigen::Index>(t - t0)) = unit_neurons.row(targets[t]);
    std::vector<std::vector<RankedAtom>> lists(t1 - t0);
    for (std::size_t b = 0; b < n_blocks; ++b) {
      const std::size_t begin = b * kAtomBlock;
      const std::size_t end = std::min(rows.size(), begin + kAtomBlock);
      const Matrix c = block_cosines(gather(atoms, rows, begin, end), sub);
      for (Eigen::Index i = 0; i < c.rows(); ++i) {
        const double thr = threshold[begin + static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < c.cols(); ++j) {
          const double v = c(i, j);
          if ((sgn ? std::abs(v) : v) >= thr && std::abs(v) >= cfg.min_atom_cos)
            lists[static_cast<std::size_t>(j)].push_back({rows[begin + static_cast<std::size_t>(i)], v});
        }
      }
    }
    for (std::size_t t = t0; t < t1; ++t) {
      auto& list = lists[t - t0];
      rank_candidates(list, atoms);
      const int n = targets[t];
      try {
        out.explanations[t] = greedy_bundle(weights.row(n).transpose(), list, atoms, cfg);
      } catch (const DegenerateInputError&) {
        out.explanations[t] = empty_explanation(layer, n, hash);
      }
      out.explanations[t].layer = layer;
      out.explanations[t].neuron = n;
    }
  });
  out.coverage = coverage_of(out.explanations, cfg.max_bundle);
  return out;
}

Explanation explain_single(const FoldedModel& model, const AtomTable& atoms, int layer, int neuron,
                           const ExplainerConfig& config) {
  const int only[] = {neuron};
  return explain_layer(model, atoms, layer, config, only).explanations.front();
}

}  // namespace vsalens
