#pragma once

// Greedy bundled-vector explanations of MLP input weights.
//
// A neuron's (centered) input weight vector w is approximated by a signed,
// unweighted sum of candidate atoms. Candidates are ranked once by
// |cos(atom, w)| and scanned in that order; an atom is kept when
//   (a) |cos(atom, w)| >= min_atom_cos,
//   (b) it raises cos(bundle, w), and
//   (c) if |cos(atom, w)| < weak_atom_cos, the raise exceeds min_gain.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vsalens/ann.hpp"
#include "vsalens/weights.hpp"

namespace vsalens {

struct AtomKinds {
  bool token = true;
  bool attn = false;
  bool mlp = false;

  bool contains(AtomKind k) const {
    return k == AtomKind::Token ? token : k == AtomKind::AttnOut ? attn : mlp;
  }
  // "token,attn,mlp" style list.
  static AtomKinds parse(const std::string& csv);
  std::string str() const;
};

struct ExplainerConfig {
  double min_atom_cos = 0.05;
  double weak_atom_cos = 0.1;
  double min_gain = 0.04;
  int shortlist_k = 512;
  int max_bundle = 64;
  AtomKinds atom_kinds;
  // Unset: signed exactly when attention or MLP atoms are enabled.
  std::optional<bool> signed_members;
  // Re-rank remaining candidates against the residual after each acceptance.
  bool matching_pursuit = false;
  // Bundle unit-length atoms rather than raw rows.
  bool normalize_atoms = true;
  // Exact GEMM shortlist; otherwise the neuron index is an HNSW graph.
  bool exact_shortlist = true;
  IndexParams index;
  int threads = 1;

  bool is_signed() const { return signed_members.value_or(atom_kinds.attn || atom_kinds.mlp); }
  // Throws ArgumentError on violated invariants.
  void validate() const;
  // SHA-256 of the fields that affect results (threads excluded).
  std::string hash() const;
};

class DegenerateInputError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

struct RankedAtom {
  std::size_t atom = 0;  // row in the AtomTable
  double cos = 0.0;      // cos(atom, neuron weight)
};

struct Member {
  AtomLabel label;
  int sign = 1;
  double atom_cos = 0.0;
};

enum class Verdict { Accepted, BelowMinCos, NoGain, WeakGain };
const char* to_string(Verdict v);

struct TraceEntry {
  AtomLabel label;
  int sign = 1;
  double atom_cos = 0.0;
  double bundle_cos = 0.0;  // after tentatively adding the atom
  Verdict verdict = Verdict::Accepted;
};

struct Explanation {
  int layer = 0;
  int neuron = 0;
  std::vector<Member> members;
  double bundle_cos = 0.0;
  std::vector<TraceEntry> trace;
  std::string config_hash;
};

// Atoms a neuron in `layer` may draw from: enabled tokens, attention outputs
// of layers <= layer, MLP outputs of layers < layer.
bool eligible(const AtomLabel& atom, int layer, const AtomKinds& kinds);

// Sorts by descending |cos|, then ascending label.
void rank_candidates(std::vector<RankedAtom>& cands, const AtomTable& atoms);

// Centered input weights of every neuron in `layer`, one per row.
Matrix neuron_weights(const FoldedModel& model, int layer);

// Per-atom top-k neuron retrieval via `neuron_index` (labels mlp:layer.n),
// inverted into per-neuron ranked candidate lists. Entries below min_atom_cos
// can never be accepted and are dropped.
std::vector<std::vector<RankedAtom>> candidate_shortlist(const AtomIndex& neuron_index, const AtomTable& atoms,
                                                         int layer, const ExplainerConfig& config);

Explanation greedy_bundle(const Vector& weight, std::span<const RankedAtom> candidates, const AtomTable& atoms,
                          const ExplainerConfig& config);

// cos(Σ sign * atom, weight) recomputed from scratch, using the same atom
// normalisation as the explainer.
double recompute_bundle_cos(const Explanation& e, const Vector& weight, const AtomTable& atoms,
                            const ExplainerConfig& config);

struct CoverageStats {
  int neurons = 0;
  double fraction_ge_0_3 = 0.0;
  double fraction_ge_0_5 = 0.0;
  double mean_bundle_cos = 0.0;
  std::vector<int> size_histogram;  // index = bundle size, 0..max_bundle
  double fraction_size_le_40 = 0.0;
};

struct LayerExplanations {
  int layer = 0;
  std::vector<Explanation> explanations;  // neuron order
  CoverageStats coverage;
};

CoverageStats coverage_of(const std::vector<Explanation>& explanations, int max_bundle);

// Explains every neuron of `layer` (or only those listed in `only`).
LayerExplanations explain_layer(const FoldedModel& model, const AtomTable& atoms, int layer,
                                const ExplainerConfig& config, std::span<const int> only = {});

Explanation explain_single(const FoldedModel& model, const AtomTable& atoms, int layer, int neuron,
                           const ExplainerConfig& config);

}  // namespace vsalens
