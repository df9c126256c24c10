#include "vsalens/weights.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace vsalens {

namespace {

using st::ShapeError;

std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "[" + std::to_string(r) + ", " + std::to_string(c) + "]";
}

void expect_shape(const std::string& name, const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() != rows || m.cols() != cols)
    throw ShapeError("tensor " + name + ": expected " + shape_str(rows, cols) + ", found " +
                     shape_str(m.rows(), m.cols()));
  if (!m.allFinite()) throw st::CorruptCheckpointError("non-finite value in tensor " + name);
}

void expect_shape(const std::string& name, const Vector& v, Eigen::Index n) {
  if (v.size() != n)
    throw ShapeError("tensor " + name + ": expected [" + std::to_string(n) + "], found [" +
                     std::to_string(v.size()) + "]");
  if (!v.allFinite()) throw st::CorruptCheckpointError("non-finite value in tensor " + name);
}

// Reads tensors by reference name, tolerating a "transformer." prefix.
class TensorSource {
 public:
  explicit TensorSource(const st::SafetensorsFile& f) : f_(f) {
    prefix_ = (!f.has("wte.weight") && f.has("transformer.wte.weight")) ? "transformer." : "";
  }

  bool has(const std::string& name) const { return f_.has(prefix_ + name); }
  std::string full(const std::string& name) const { return prefix_ + name; }

  Matrix matrix(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
    check_rank(name, 2, rows, cols);
    return f_.matrix(full(name));
  }

  Vector vector(const std::string& name, Eigen::Index n) const {
    check_rank(name, 1, n, 0);
    return f_.vector(full(name));
  }

  std::vector<std::int64_t> shape(const std::string& name) const {
    if (!has(name)) throw st::MissingTensorError(name);
    return f_.info(full(name)).shape;
  }

 private:
  void check_rank(const std::string& name, std::size_t rank, Eigen::Index a, Eigen::Index b) const {
    const auto s = shape(name);
    std::vector<std::int64_t> want{a};
    if (rank == 2) want.push_back(b);
    if (s != want) {
      std::ostringstream os;
      os << "tensor " << name << ": expected [";
      for (std::size_t i = 0; i < want.size(); ++i) os << (i ? ", " : "") << want[i];
      os << "], found [";
      for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
      os << "]";
      throw ShapeError(os.str());
    }
  }

  const st::SafetensorsFile& f_;
  std::string prefix_;
};

std::string layer_name(int i, const char* suffix) { return "h." + std::to_string(i) + "." + suffix; }

LayerNormParams identity_ln(int d) { return {Vector::Ones(d), Vector::Zero(d)}; }

// W' = W diag(g), c' = W b + c for row-oriented read matrices.
void fold_ln_into(const LayerNormParams& ln, Matrix& w, Vector& c) {
  c = w * ln.bias + c;
  w = w.array().rowwise() * ln.scale.transpose().array();
}

}  // namespace

void validate(const TransformerWeights& w) {
  const auto& s = w.shape;
  if (s.d_model <= 0 || s.n_layers <= 0 || s.n_heads <= 0 || s.d_head <= 0 || s.d_mlp <= 0 ||
      s.vocab <= 0 || s.n_ctx <= 0)
    throw ShapeError("model shape has non-positive dimensions");
  const int hd = s.n_heads * s.d_head;
  expect_shape("wte.weight", w.w_e, s.vocab, s.d_model);
  expect_shape("wpe.weight", w.w_pos, s.n_ctx, s.d_model);
  if (static_cast<int>(w.layers.size()) != s.n_layers)
    throw ShapeError("expected " + std::to_string(s.n_layers) + " layers, found " +
                     std::to_string(w.layers.size()));
  for (int i = 0; i < s.n_layers; ++i) {
    const auto& l = w.layers[static_cast<std::size_t>(i)];
    expect_shape(layer_name(i, "ln_1.weight"), l.ln1.scale, s.d_model);
    expect_shape(layer_name(i, "ln_1.bias"), l.ln1.bias, s.d_model);
    expect_shape(layer_name(i, "attn.W_Q"), l.w_q, hd, s.d_model);
    expect_shape(layer_name(i, "attn.W_K"), l.w_k, hd, s.d_model);
    expect_shape(layer_name(i, "attn.W_V"), l.w_v, hd, s.d_model);
    expect_shape(layer_name(i, "attn.b_Q"), l.b_q, hd);
    expect_shape(layer_name(i, "attn.b_K"), l.b_k, hd);
    expect_shape(layer_name(i, "attn.b_V"), l.b_v, hd);
    expect_shape(layer_name(i, "attn.c_proj.weight"), l.w_o, hd, s.d_model);
    expect_shape(layer_name(i, "attn.c_proj.bias"), l.b_o, s.d_model);
    expect_shape(layer_name(i, "ln_2.weight"), l.ln2.scale, s.d_model);
    expect_shape(layer_name(i, "ln_2.bias"), l.ln2.bias, s.d_model);
    expect_shape(layer_name(i, "mlp.W_in"), l.w_in, s.d_mlp, s.d_model);
    expect_shape(layer_name(i, "mlp.c_fc.bias"), l.b_in, s.d_mlp);
    expect_shape(layer_name(i, "mlp.c_proj.weight"), l.w_out, s.d_mlp, s.d_model);
    expect_shape(layer_name(i, "mlp.c_proj.bias"), l.b_out, s.d_model);
  }
  expect_shape("ln_f.weight", w.ln_f.scale, s.d_model);
  expect_shape("ln_f.bias", w.ln_f.bias, s.d_model);
  expect_shape("unembed.weight", w.w_u, s.vocab, s.d_model);
  expect_shape("unembed.bias", w.b_u, s.vocab);
}

RawWeights load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FilesystemError("checkpoint not found: " + path.string());
  const auto file = st::SafetensorsFile::read(path);
  const TensorSource src(file);

  RawWeights w;
  const auto wte = src.shape("wte.weight");
  const auto wpe = src.shape("wpe.weight");
  if (wte.size() != 2 || wpe.size() != 2) throw ShapeError("embeddings must be rank 2");
  auto& s = w.shape;
  s.vocab = static_cast<int>(wte[0]);
  s.d_model = static_cast<int>(wte[1]);
  s.n_ctx = static_cast<int>(wpe[0]);

  const auto& meta = file.metadata();
  while (src.has(layer_name(s.n_layers, "ln_1.weight"))) ++s.n_layers;
  if (auto it = meta.find("n_layer"); it != meta.end()) s.n_layers = std::stoi(it->second);
  if (s.n_layers == 0) throw st::MissingTensorError(layer_name(0, "ln_1.weight"));
  if (auto it = meta.find("n_head"); it != meta.end()) {
    s.n_heads = std::stoi(it->second);
  } else if (s.d_model % 64 == 0) {
    s.n_heads = s.d_model / 64;
  } else {
    throw ShapeError("d_model " + std::to_string(s.d_model) +
                     " is not a multiple of 64; checkpoint metadata must carry n_head");
  }
  if (s.n_heads <= 0 || s.d_model % s.n_heads != 0)
    throw ShapeError("n_head does not divide d_model");
  s.d_head = s.d_model / s.n_heads;
  const auto fc = src.shape(layer_name(0, "mlp.c_fc.weight"));
  if (fc.size() != 2) throw ShapeError("mlp.c_fc.weight must be rank 2");
  s.d_mlp = static_cast<int>(fc[1]);
  if (auto it = meta.find("layer_norm_epsilon"); it != meta.end()) s.ln_eps = std::stod(it->second);
  if (auto it = meta.find("folded"); it != meta.end()) w.folded = it->second == "true";

  const int d = s.d_model;
  w.w_e = src.matrix("wte.weight", s.vocab, d);
  w.w_pos = src.matrix("wpe.weight", s.n_ctx, d);
  for (int i = 0; i < s.n_layers; ++i) {
    LayerWeights l;
    l.ln1 = {src.vector(layer_name(i, "ln_1.weight"), d), src.vector(layer_name(i, "ln_1.bias"), d)};
    const Matrix c_attn = src.matrix(layer_name(i, "attn.c_attn.weight"), d, 3 * d);
    const Vector b_attn = src.vector(layer_name(i, "attn.c_attn.bias"), 3 * d);
    l.w_q = c_attn.middleCols(0, d).transpose();
    l.w_k = c_attn.middleCols(d, d).transpose();
    l.w_v = c_attn.middleCols(2 * d, d).transpose();
    l.b_q = b_attn.segment(0, d);
    l.b_k = b_attn.segment(d, d);
    l.b_v = b_attn.segment(2 * d, d);
    l.w_o = src.matrix(layer_name(i, "attn.c_proj.weight"), d, d);
    l.b_o = src.vector(layer_name(i, "attn.c_proj.bias"), d);
    l.ln2 = {src.vector(layer_name(i, "ln_2.weight"), d), src.vector(layer_name(i, "ln_2.bias"), d)};
    l.w_in = src.matrix(layer_name(i, "mlp.c_fc.weight"), d, s.d_mlp).transpose();
    l.b_in = src.vector(layer_name(i, "mlp.c_fc.bias"), s.d_mlp);
    l.w_out = src.matrix(layer_name(i, "mlp.c_proj.weight"), s.d_mlp, d);
    l.b_out = src.vector(layer_name(i, "mlp.c_proj.bias"), d);
    w.layers.push_back(std::move(l));
  }
  w.ln_f = {src.vector("ln_f.weight", d), src.vector("ln_f.bias", d)};
  if (src.has("unembed.weight")) {
    w.w_u = src.matrix("unembed.weight", s.vocab, d);
    w.b_u = src.vector("unembed.bias", s.vocab);
  } else {
    w.w_u = w.w_e;
    w.b_u = Vector::Zero(s.vocab);
  }
  validate(w);
  return w;
}

FoldedModel fold_layernorm(const RawWeights& raw) {
  if (raw.folded) throw AlreadyFoldedError("weights are already folded; refusing to fold twice");
  validate(raw);
  TransformerWeights w = raw;
  const int d = w.shape.d_model;
  for (auto& l : w.layers) {
    fold_ln_into(l.ln1, l.w_q, l.b_q);
    fold_ln_into(l.ln1, l.w_k, l.b_k);
    fold_ln_into(l.ln1, l.w_v, l.b_v);
    l.ln1 = identity_ln(d);
    // Attention rows sum to one, so the value bias passes through unchanged.
    l.b_o = l.w_o.transpose() * l.b_v + l.b_o;
    l.b_v.setZero();
    fold_ln_into(l.ln2, l.w_in, l.b_in);
    l.ln2 = identity_ln(d);
  }
  fold_ln_into(w.ln_f, w.w_u, w.b_u);
  w.ln_f = identity_ln(d);
  w.folded = true;
  return FoldedModel(std::move(w));
}

FoldedModel FoldedModel::from_folded(TransformerWeights weights) {
  if (!weights.folded) throw ArgumentError("from_folded: weights are not marked folded");
  validate(weights);
  return FoldedModel(std::move(weights));
}

void save_checkpoint(const TransformerWeights& w, const std::filesystem::path& path) {
  validate(w);
  std::vector<st::OutTensor> out;
  out.push_back(st::to_out_tensor("wte.weight", w.w_e));
  out.push_back(st::to_out_tensor("wpe.weight", w.w_pos));
  for (int i = 0; i < w.shape.n_layers; ++i) {
    const auto& l = w.layers[static_cast<std::size_t>(i)];
    const int d = w.shape.d_model;
    Matrix c_attn(d, 3 * d);
    c_attn << l.w_q.transpose(), l.w_k.transpose(), l.w_v.transpose();
    Vector b_attn(3 * d);
    b_attn << l.b_q, l.b_k, l.b_v;
    out.push_back(st::to_out_tensor(layer_name(i, "ln_1.weight"), l.ln1.scale));
    out.push_back(st::to_out_tensor(layer_name(i, "ln_1.bias"), l.ln1.bias));
    out.push_back(st::to_out_tensor(layer_name(i, "attn.c_attn.weight"), c_attn));
    out.push_back(st::to_out_tensor(layer_name(i, "attn.c_attn.bias"), b_attn));
    out.push_back(st::to_out_tensor(layer_name(i, "attn.c_proj.weight"), l.w_o));
    out.push_back(st::to_out_tensor(layer_name(i, "attn.c_proj.bias"), l.b_o));
    out.push_back(st::to_out_tensor(layer_name(i, "ln_2.weight"), l.ln2.scale));
    out.push_back(st::to_out_tensor(layer_name(i, "ln_2.bias"), l.ln2.bias));
    out.push_back(st::to_out_tensor(layer_name(i, "mlp.c_fc.weight"), Matrix(l.w_in.transpose())));
    out.push_back(st::to_out_tensor(layer_name(i, "mlp.c_fc.bias"), l.b_in));
    out.push_back(st::to_out_tensor(layer_name(i, "mlp.c_proj.weight"), l.w_out));
    out.push_back(st::to_out_tensor(layer_name(i, "mlp.c_proj.bias"), l.b_out));
  }
  out.push_back(st::to_out_tensor("ln_f.weight", w.ln_f.scale));
  out.push_back(st::to_out_tensor("ln_f.bias", w.ln_f.bias));
  std::map<std::string, std::string> meta{{"format", "pt"},
                                          {"n_head", std::to_string(w.shape.n_heads)},
                                          {"n_layer", std::to_string(w.shape.n_layers)}};
  if (w.folded) {
    out.push_back(st::to_out_tensor("unembed.weight", w.w_u));
    out.push_back(st::to_out_tensor("unembed.bias", w.b_u));
    meta["folded"] = "true";
  }
  st::write_safetensors(path, out, meta);
}

const char* to_string(AtomKind kind) {
  switch (kind) {
    case AtomKind::Token: return "TOKEN";
    case AtomKind::AttnOut: return "ATTN_OUT";
    case AtomKind::MlpOut: return "MLP_OUT";
  }
  return "?";
}

std::string AtomLabel::str() const {
  switch (kind) {
    case AtomKind::Token: return "tok:" + std::to_string(index);
    case AtomKind::AttnOut:
      return "attn:" + std::to_string(layer) + "." + std::to_string(head) + "." + std::to_string(index);
    case AtomKind::MlpOut: return "mlp:" + std::to_string(layer) + "." + std::to_string(index);
  }
  return "?";
}

AtomLabel AtomLabel::parse(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw ArgumentError("bad atom label: " + s);
  const std::string kind = s.substr(0, colon);
  std::vector<int> parts;
  std::stringstream ss(s.substr(colon + 1));
  for (std::string item; std::getline(ss, item, '.');) {
    int v = 0;
    const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || end != item.data() + item.size() || v < 0)
      throw ArgumentError("bad atom label: " + s);
    parts.push_back(v);
  }
  if (kind == "tok" && parts.size() == 1) return token(parts[0]);
  if (kind == "attn" && parts.size() == 3) return attn(parts[0], parts[1], parts[2]);
  if (kind == "mlp" && parts.size() == 2) return mlp(parts[0], parts[1]);
  throw ArgumentError("bad atom label: " + s);
}

AtomTable::AtomTable(Matrix vectors, std::vector<AtomLabel> labels)
    : vectors_(std::move(vectors)), labels_(std::move(labels)) {
  if (static_cast<std::size_t>(vectors_.rows()) != labels_.size())
    throw ArgumentError("atom table: row count does not match label count");
  for (std::size_t i = 1; i < labels_.size(); ++i)
    if (!(labels_[i - 1] < labels_[i]))
      throw ArgumentError("atom table: labels must be strictly increasing (duplicate " +
                          labels_[i].str() + "?)");
}

std::size_t AtomTable::find(const AtomLabel& label) const {
  auto it = std::lower_bound(labels_.begin(), labels_.end(), label);
  if (it == labels_.end() || *it != label) throw LookupError("atom not in table: " + label.str());
  return static_cast<std::size_t>(it - labels_.begin());
}

std::size_t AtomTable::count(AtomKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(labels_.begin(), labels_.end(), [kind](const AtomLabel& l) { return l.kind == kind; }));
}

AtomTable atom_table(const FoldedModel& model) {
  const auto& w = model.weights();
  const auto& s = w.shape;
  const Eigen::Index n = static_cast<Eigen::Index>(s.vocab) +
                         static_cast<Eigen::Index>(s.n_layers) * s.n_heads * s.d_head +
                         static_cast<Eigen::Index>(s.n_layers) * s.d_mlp;
  Matrix vectors(n, s.d_model);
  std::vector<AtomLabel> labels;
  labels.reserve(static_cast<std::size_t>(n));
  Eigen::Index row = 0;
  auto put = [&](const auto& v, AtomLabel label) {
    vectors.row(row++) = v.array() - v.mean();
    labels.push_back(label);
  };
  for (int t = 0; t < s.vocab; ++t) put(w.w_e.row(t), AtomLabel::token(t));
  for (int l = 0; l < s.n_layers; ++l)
    for (int h = 0; h < s.n_heads; ++h)
      for (int k = 0; k < s.d_head; ++k)
        put(w.layers[static_cast<std::size_t>(l)].w_o.row(h * s.d_head + k), AtomLabel::attn(l, h, k));
  for (int l = 0; l < s.n_layers; ++l)
    for (int k = 0; k < s.d_mlp; ++k) put(w.layers[static_cast<std::size_t>(l)].w_out.row(k), AtomLabel::mlp(l, k));
  return AtomTable(std::move(vectors), std::move(labels));
}

FoldedModel load_folded(const std::filesystem::path& path) {
  auto raw = load_checkpoint(path);
  if (raw.folded) return FoldedModel::from_folded(std::move(raw));
  return fold_layernorm(raw);
}

}  // namespace vsalens
