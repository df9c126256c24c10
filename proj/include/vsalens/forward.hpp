#pragma once

// Pre-LN GPT-2 inference with residual-stream recording and neuron ablation.

#include <filesystem>
#include <span>
#include <vector>

#include "vsalens/weights.hpp"

namespace vsalens {

class ContextLengthError : public InputError {
 public:
  using InputError::InputError;
};

enum class AblationMode { ZeroActivation };

struct AblationSpec {
  int layer = 0;
  int neuron = 0;
  AblationMode mode = AblationMode::ZeroActivation;
  // Empty means every position.
  std::vector<int> positions;
};

struct ForwardTrace {
  // residuals[b] is seq x d_model; boundary b is the input of layer b, and
  // boundary n_layers is the input of the final LayerNorm. Empty unless recorded.
  std::vector<Matrix> residuals;
  // attention[layer][head] is seq x seq, row-stochastic. Empty unless recorded.
  std::vector<std::vector<Matrix>> attention;
  Matrix logits;  // seq x vocab
  std::vector<AblationSpec> ablations;
};

double gelu(double x);

// Works on raw and folded weights alike; folded weights simply carry identity
// LayerNorm parameters.
ForwardTrace forward(const TransformerWeights& weights, std::span<const int> token_ids, bool record = false,
                     std::span<const AblationSpec> ablations = {});
ForwardTrace forward(const FoldedModel& model, std::span<const int> token_ids, bool record = false,
                     std::span<const AblationSpec> ablations = {});

struct LogitDelta {
  double clean_logit = 0.0;
  double ablated_logit = 0.0;
  double delta = 0.0;  // ablated - clean, final position
};

LogitDelta logit_delta(const FoldedModel& model, std::span<const int> token_ids, int target_token_id,
                       const AblationSpec& ablation);

// For each boundary: mean over all prompts and positions of |coordinate mean of the residual|.
std::vector<double> residual_mean_stats(const FoldedModel& model,
                                        const std::vector<std::vector<int>>& prompts);

// One whitespace-separated token-id sequence per line; blank lines and lines
// starting with '#' are skipped.
std::vector<std::vector<int>> read_prompt_ids(const std::filesystem::path& path);

}  // namespace vsalens
