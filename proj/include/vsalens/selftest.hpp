#pragma once

// Checkpoint-free oracle suite: every check builds its own ground truth.

#include <cstdint>
#include <string>
#include <vector>

#include "vsalens/json_io.hpp"
#include "vsalens/weights.hpp"

namespace vsalens {

struct SelftestOptions {
  std::uint64_t seed = 0;
  int threads = 1;
  int planted_trials = 100;
  int planted_pool = 1000;
  int planted_dim = 768;
  std::size_t ann_atoms = 100000;
  int ann_dim = 32;
  int ann_construction_beam = 48;
  int ann_queries = 200;
};

struct SelftestCheck {
  std::string name;
  bool passed = false;
  Json metrics;         // deterministic for fixed options
  double seconds = 0.0; // not serialised
};

struct SelftestReport {
  std::vector<SelftestCheck> checks;
  bool passed() const;
  const SelftestCheck& check(const std::string& name) const;
};

// Small GPT-2-shaped model with Gaussian weights. With `random_layernorm` the
// LayerNorm scales and biases are perturbed away from identity.
TransformerWeights random_mini_model(const ModelShape& shape, std::uint64_t seed, bool random_layernorm = true);

// Check names: planted_recovery, binding_preservation, boolean_gates,
// or_set_superposition, ann_recall, fold_equivalence, forward_causality,
// ablation_locality, deterministic_output.
SelftestCheck check_planted_recovery(const SelftestOptions& o);
SelftestCheck check_binding_preservation(const SelftestOptions& o);
SelftestCheck check_boolean_gates(const SelftestOptions& o);
SelftestCheck check_or_set_superposition(const SelftestOptions& o);
SelftestCheck check_ann_recall(const SelftestOptions& o);
SelftestCheck check_fold_equivalence(const SelftestOptions& o);
SelftestCheck check_forward_causality(const SelftestOptions& o);
SelftestCheck check_ablation_locality(const SelftestOptions& o);
SelftestCheck check_deterministic_output(const SelftestOptions& o);

SelftestReport run_selftest(const SelftestOptions& options = {});

Json to_json(const SelftestReport& r);

}  // namespace vsalens
