#pragma once

// Near-orthogonality diagnostics: row-cosine Gram matrices, bias/embedding
// orthogonality and coordinate-mean statistics.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vsalens/weights.hpp"

namespace vsalens {

struct Gram {
  Matrix values;                       // exactly symmetric
  std::vector<Eigen::Index> zero_rows;  // rows whose cosines are defined as 0
};

// Row cosines (or raw inner products when `raw`). Needs at least 2 rows.
Gram gram(const Matrix& rows, bool raw = false);

struct GramReport {
  std::string target;
  Eigen::Index size = 0;
  double diag_mean = 0.0;
  double diag_min = 0.0;
  double offdiag_mean = 0.0;    // of |entry|
  double offdiag_median = 0.0;  // of |entry|
  double offdiag_max = 0.0;     // of |entry|
  double frac_above = 0.0;      // fraction of off-diagonal |entry| > threshold
  double threshold = 0.1;
};

GramReport diagonal_dominance(const Matrix& gram, double threshold = 0.1, std::string target = {});

struct BiasCosSummary {
  double mean_abs = 0.0;
  double max_abs = 0.0;
  int argmax_token = -1;
};

struct LayerBiasReport {
  int layer = 0;
  double attn_bias_norm = 0.0;
  double mlp_bias_norm = 0.0;
  BiasCosSummary attn_vs_embedding;
  BiasCosSummary mlp_vs_embedding;
};

struct BiasReport {
  std::vector<LayerBiasReport> layers;
  int max_attn_bias_layer = -1;
  int max_mlp_bias_layer = -1;
};

BiasReport bias_orthogonality(const FoldedModel& model);

struct EmbeddingMeanStats {
  double mean_abs = 0.0;  // mean over tokens of |coordinate mean|
  double max_abs = 0.0;
};

EmbeddingMeanStats embedding_mean_stats(const FoldedModel& model);

// Row sets addressed by diagnose targets: "embeddings", "attn:L.H.{Q|K|V|O}", "mlp_out:L".
// `max_rows` truncates to a top-left cutout (0 = all rows).
Matrix target_rows(const FoldedModel& model, const std::string& target, Eigen::Index max_rows = 0);

struct HeatmapFiles {
  std::filesystem::path pgm;
  std::filesystem::path csv;
};

// Binary 8-bit PGM of |entry| (0..1 -> 0..255) and a CSV of the signed entries,
// optionally restricted to the top-left `cutout` x `cutout` block.
HeatmapFiles heatmap_export(const Matrix& gram, const std::filesystem::path& stem,
                            std::optional<Eigen::Index> cutout = std::nullopt);

}  // namespace vsalens
