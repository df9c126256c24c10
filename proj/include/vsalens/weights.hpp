#pragma once

// GPT-2 checkpoint loading, LayerNorm/bias folding and the candidate-atom table.
//
// Orientation: every matrix stores one residual-space vector per row.
//   w_q, w_k, w_v : (n_heads*d_head) x d_model, rows are read directions
//   w_o           : (n_heads*d_head) x d_model, rows are write directions
//   w_in          : d_mlp x d_model, row n = input weights of neuron n
//   w_out         : d_mlp x d_model, row n = output direction of neuron n
// Reference checkpoints store linear maps as (in, out); read maps are
// transposed at load time and write maps are kept as stored.

#include <compare>
#include <filesystem>
#include <string>
#include <vector>

#include "vsalens/common.hpp"
#include "vsalens/safetensors.hpp"

namespace vsalens {

struct ModelShape {
  int d_model = 0;
  int n_layers = 0;
  int n_heads = 0;
  int d_head = 0;
  int d_mlp = 0;
  int vocab = 0;
  int n_ctx = 0;
  double ln_eps = 1e-5;

  auto operator<=>(const ModelShape&) const = default;
};

struct LayerNormParams {
  Vector scale;
  Vector bias;
};

struct LayerWeights {
  LayerNormParams ln1;
  Matrix w_q, w_k, w_v;
  Vector b_q, b_k, b_v;
  Matrix w_o;
  Vector b_o;
  LayerNormParams ln2;
  Matrix w_in;
  Vector b_in;
  Matrix w_out;
  Vector b_out;
};

struct TransformerWeights {
  ModelShape shape;
  Matrix w_e;    // vocab x d_model
  Matrix w_pos;  // n_ctx x d_model
  std::vector<LayerWeights> layers;
  LayerNormParams ln_f;
  // Logits = w_u * ln_f(x) + b_u. Tied to w_e (and b_u = 0) before folding.
  Matrix w_u;
  Vector b_u;
  bool folded = false;
};

using RawWeights = TransformerWeights;

class AlreadyFoldedError : public Error {
 public:
  using Error::Error;
};

// Weights with every LayerNorm scale/bias absorbed into the following linear
// map and the value bias absorbed into the attention output bias.
class FoldedModel {
 public:
  // Wraps weights that were folded elsewhere (e.g. reloaded from a folded
  // checkpoint); throws ArgumentError if they are not.
  static FoldedModel from_folded(TransformerWeights weights);

  const TransformerWeights& weights() const { return w_; }
  const ModelShape& shape() const { return w_.shape; }

 private:
  friend FoldedModel fold_layernorm(const RawWeights& raw);
  explicit FoldedModel(TransformerWeights w) : w_(std::move(w)) {}
  TransformerWeights w_;
};

RawWeights load_checkpoint(const std::filesystem::path& path);
// Throws AlreadyFoldedError when raw.folded is set.
FoldedModel fold_layernorm(const RawWeights& raw);
// load_checkpoint followed by fold_layernorm, unless the file is already folded.
FoldedModel load_folded(const std::filesystem::path& path);
// Reference tensor names and (in, out) layout; folded weights also carry
// unembed.weight/unembed.bias and folded=true metadata.
void save_checkpoint(const TransformerWeights& weights, const std::filesystem::path& path);

// Validates shapes against `shape` and all entries finite.
void validate(const TransformerWeights& weights);

enum class AtomKind { Token = 0, AttnOut = 1, MlpOut = 2 };

const char* to_string(AtomKind kind);

struct AtomLabel {
  AtomKind kind = AtomKind::Token;
  int layer = -1;  // -1 for tokens
  int head = -1;   // attention only
  int index = 0;   // token id, head dimension, or neuron index

  auto operator<=>(const AtomLabel&) const = default;

  static AtomLabel token(int id) { return {AtomKind::Token, -1, -1, id}; }
  static AtomLabel attn(int layer, int head, int dim) { return {AtomKind::AttnOut, layer, head, dim}; }
  static AtomLabel mlp(int layer, int neuron) { return {AtomKind::MlpOut, layer, -1, neuron}; }

  // "tok:186", "attn:1.4.11", "mlp:0.2977"
  std::string str() const;
  static AtomLabel parse(const std::string& s);
};

struct CandidateAtomView {
  Eigen::Ref<const Vector> vector;
  AtomLabel label;
  int source_layer() const { return label.layer; }
};

// Centered candidate atoms, one per row, in a fixed order: all tokens, then
// attention output rows layer by layer, then MLP output rows layer by layer.
class AtomTable {
 public:
  AtomTable() = default;
  AtomTable(Matrix vectors, std::vector<AtomLabel> labels);

  std::size_t size() const { return labels_.size(); }
  Eigen::Index dim() const { return vectors_.cols(); }
  const Matrix& vectors() const { return vectors_; }
  const std::vector<AtomLabel>& labels() const { return labels_; }
  CandidateAtomView atom(std::size_t i) const {
    return {vectors_.row(static_cast<Eigen::Index>(i)).transpose(), labels_[i]};
  }
  // Throws LookupError for labels not in the table.
  std::size_t find(const AtomLabel& label) const;
  std::size_t count(AtomKind kind) const;

 private:
  Matrix vectors_;
  std::vector<AtomLabel> labels_;
};

AtomTable atom_table(const FoldedModel& model);

}  // namespace vsalens
