#include "vsalens/forward.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace vsalens {

namespace {

Matrix layer_norm(const Matrix& x, const LayerNormParams& ln, double eps) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto row = x.row(i);
    const double mean = row.mean();
    const auto c = (row.array() - mean).matrix();
    const double var = c.squaredNorm() / static_cast<double>(x.cols());
    out.row(i) = (c.array() / std::sqrt(var + eps)) * ln.scale.transpose().array() + ln.bias.transpose().array();
  }
  return out;
}

Matrix affine(const Matrix& x, const Matrix& read_rows, const Vector& bias) {
  Matrix y = x * read_rows.transpose();
  y.rowwise() += bias.transpose();
  return y;
}

void check_inputs(const TransformerWeights& w, std::span<const int> ids, std::span<const AblationSpec> ablations) {
  if (ids.empty()) throw InputError("forward: empty token sequence");
  if (static_cast<int>(ids.size()) > w.shape.n_ctx)
    throw ContextLengthError("forward: sequence length " + std::to_string(ids.size()) +
                             " exceeds context length " + std::to_string(w.shape.n_ctx));
  for (int id : ids)
    if (id < 0 || id >= w.shape.vocab) throw InputError("forward: token id " + std::to_string(id) + " out of range");
  for (const auto& a : ablations) {
    if (a.layer < 0 || a.layer >= w.shape.n_layers || a.neuron < 0 || a.neuron >= w.shape.d_mlp)
      throw ArgumentError("ablation (" + std::to_string(a.layer) + ", " + std::to_string(a.neuron) +
                          ") out of range");
    for (int p : a.positions)
      if (p < 0 || p >= static_cast<int>(ids.size())) throw ArgumentError("ablation position out of range");
  }
}

}  // namespace

double gelu(double x) {
  const double k = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

ForwardTrace forward(const TransformerWeights& w, std::span<const int> ids, bool record,
                     std::span<const AblationSpec> ablations) {
  check_inputs(w, ids, ablations);
  const auto& s = w.shape;
  const auto seq = static_cast<Eigen::Index>(ids.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(s.d_head));

  ForwardTrace trace;
  trace.ablations.assign(ablations.begin(), ablations.end());

  Matrix x(seq, s.d_model);
  for (Eigen::Index t = 0; t < seq; ++t) x.row(t) = w.w_e.row(ids[static_cast<std::size_t>(t)]) + w.w_pos.row(t);
  if (record) trace.residuals.push_back(x);

  for (int li = 0; li < s.n_layers; ++li) {
    const auto& l = w.layers[static_cast<std::size_t>(li)];
    const Matrix h1 = layer_norm(x, l.ln1, s.ln_eps);
    const Matrix q = affine(h1, l.w_q, l.b_q);
    const Matrix k = affine(h1, l.w_k, l.b_k);
    const Matrix v = affine(h1, l.w_v, l.b_v);
    Matrix z(seq, s.n_heads * s.d_head);
    std::vector<Matrix> patterns;
    for (int h = 0; h < s.n_heads; ++h) {
      const auto qh = q.middleCols(h * s.d_head, s.d_head);
      const auto kh = k.middleCols(h * s.d_head, s.d_head);
      Matrix a = (qh * kh.transpose()) * scale;
      for (Eigen::Index i = 0; i < seq; ++i) {
        const double m = a.row(i).head(i + 1).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index j = 0; j < seq; ++j) {
          a(i, j) = j <= i ? std::exp(a(i, j) - m) : 0.0;
          sum += a(i, j);
        }
        a.row(i) /= sum;
      }
      z.middleCols(h * s.d_head, s.d_head) = a * v.middleCols(h * s.d_head, s.d_head);
      if (record) patterns.push_back(std::move(a));
    }
    if (record) trace.attention.push_back(std::move(patterns));
    Matrix attn_out = z * l.w_o;
    attn_out.rowwise() += l.b_o.transpose();
    x += attn_out;

    const Matrix h2 = layer_norm(x, l.ln2, s.ln_eps);
    Matrix act = affine(h2, l.w_in, l.b_in).unaryExpr([](double u) { return gelu(u); });
    for (const auto& ab : ablations) {
      if (ab.layer != li) continue;
      if (ab.positions.empty())
        act.col(ab.neuron).setZero();
      else
        for (int p : ab.positions) act(p, ab.neuron) = 0.0;
    }
    Matrix mlp_out = act * l.w_out;
    mlp_out.rowwise() += l.b_out.transpose();
    x += mlp_out;
    if (record) trace.residuals.push_back(x);
  }

  trace.logits = affine(layer_norm(x, w.ln_f, s.ln_eps), w.w_u, w.b_u);
  if (!trace.logits.allFinite()) throw Error("forward: non-finite logits");
  return trace;
}

ForwardTrace forward(const FoldedModel& model, std::span<const int> ids, bool record,
                     std::span<const AblationSpec> ablations) {
  return forward(model.weights(), ids, record, ablations);
}

LogitDelta logit_delta(const FoldedModel& model, std::span<const int> ids, int target, const AblationSpec& ablation) {
  if (target < 0 || target >= model.shape().vocab)
    throw InputError("target token id " + std::to_string(target) + " out of range");
  const auto clean = forward(model, ids);
  const AblationSpec abl[] = {ablation};
  const auto ablated = forward(model, ids, false, abl);
  const auto last = static_cast<Eigen::Index>(ids.size()) - 1;
  LogitDelta d;
  d.clean_logit = clean.logits(last, target);
  d.ablated_logit = ablated.logits(last, target);
  d.delta = d.ablated_logit - d.clean_logit;
  return d;
}

std::vector<double> residual_mean_stats(const FoldedModel& model, const std::vector<std::vector<int>>& prompts) {
  if (prompts.empty()) throw ArgumentError("residual_mean_stats: empty prompt set");
  std::vector<double> sums(static_cast<std::size_t>(model.shape().n_layers + 1), 0.0);
  double count = 0.0;
  for (const auto& p : prompts) {
    const auto trace = forward(model, p, true);
    for (std::size_t b = 0; b < trace.residuals.size(); ++b)
      sums[b] += trace.residuals[b].rowwise().mean().cwiseAbs().sum();
    count += static_cast<double>(p.size());
  }
  for (auto& v : sums) v /= count;
  return sums;
}

std::vector<std::vector<int>> read_prompt_ids(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FilesystemError("cannot read prompt ids " + path.string());
  std::vector<std::vector<int>> prompts;
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    std::vector<int> ids;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        const int id = std::stoi(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        ids.push_back(id);
      } catch (const std::exception&) {
        throw InputError(path.string() + ":" + std::to_string(line_no) + ": not a token id: " + tok);
      }
    }
    prompts.push_back(std::move(ids));
  }
  if (prompts.empty()) throw InputError(path.string() + ": no prompts");
  return prompts;
}

}  // namespace vsalens
