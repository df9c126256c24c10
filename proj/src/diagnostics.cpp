#include "vsalens/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>

namespace vsalens {

Gram gram(const Matrix& rows, bool raw) {
  if (rows.rows() < 2) throw ArgumentError("gram: need at least 2 rows");
  Gram g;
  Matrix m = rows;
  if (!raw) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double n = m.row(i).norm();
      if (n > 0.0)
        m.row(i) /= n;
      else
        g.zero_rows.push_back(i);
    }
  }
  const Eigen::Index n = m.rows();
  g.values = Matrix::Zero(n, n);
  g.values.selfadjointView<Eigen::Upper>().rankUpdate(m);
  g.values.triangularView<Eigen::StrictlyLower>() = g.values.transpose();
  if (!raw) {
    for (Eigen::Index i = 0; i < n; ++i) g.values(i, i) = 1.0;
    for (Eigen::Index z : g.zero_rows) g.values(z, z) = 0.0;
  }
  return g;
}

GramReport diagonal_dominance(const Matrix& gram, double threshold, std::string target) {
  if (gram.rows() != gram.cols() || gram.rows() == 0) throw ArgumentError("diagonal_dominance: need a square matrix");
  GramReport r;
  r.target = std::move(target);
  r.size = gram.rows();
  r.threshold = threshold;
  r.diag_mean = gram.diagonal().mean();
  r.diag_min = gram.diagonal().minCoeff();
  const Eigen::Index n = gram.rows();
  if (n < 2) return r;

  std::vector<double> off;
  off.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) off.push_back(std::abs(gram(i, j)));
  double sum = 0.0;
  std::size_t above = 0;
  for (double v : off) {
    sum += v;
    if (v > threshold) ++above;
  }
  r.offdiag_mean = sum / static_cast<double>(off.size());
  r.offdiag_max = *std::max_element(off.begin(), off.end());
  r.frac_above = static_cast<double>(above) / static_cast<double>(off.size());
  const std::size_t mid = off.size() / 2;
  std::nth_element(off.begin(), off.begin() + static_cast<std::ptrdiff_t>(mid), off.end());
  if (off.size() % 2 == 1) {
    r.offdiag_median = off[mid];
  } else {
    const double hi = off[mid];
    const double lo = *std::max_element(off.begin(), off.begin() + static_cast<std::ptrdiff_t>(mid));
    r.offdiag_median = 0.5 * (lo + hi);
  }
  return r;
}

namespace {

BiasCosSummary cos_vs_rows(const Matrix& rows, const Vector& bias) {
  BiasCosSummary s;
  const double bn = bias.norm();
  if (bn == 0.0) return s;
  const Vector dots = rows * (bias / bn);
  double sum = 0.0;
  for (Eigen::Index t = 0; t < rows.rows(); ++t) {
    const double rn = rows.row(t).norm();
    const double c = rn > 0.0 ? std::abs(dots(t) / rn) : 0.0;
    sum += c;
    if (c > s.max_abs) {
      s.max_abs = c;
      s.argmax_token = static_cast<int>(t);
    }
  }
  s.mean_abs = sum / static_cast<double>(rows.rows());
  return s;
}

}  // namespace

BiasReport bias_orthogonality(const FoldedModel& model) {
  const auto& w = model.weights();
  BiasReport r;
  double best_attn = -1.0;
  double best_mlp = -1.0;
  for (int l = 0; l < w.shape.n_layers; ++l) {
    const auto& lw = w.layers[static_cast<std::size_t>(l)];
    LayerBiasReport lr;
    lr.layer = l;
    lr.attn_bias_norm = lw.b_o.norm();
    lr.mlp_bias_norm = lw.b_out.norm();
    lr.attn_vs_embedding = cos_vs_rows(w.w_e, lw.b_o);
    lr.mlp_vs_embedding = cos_vs_rows(w.w_e, lw.b_out);
    if (lr.attn_bias_norm > best_attn) {
      best_attn = lr.attn_bias_norm;
      r.max_attn_bias_layer = l;
    }
    if (lr.mlp_bias_norm > best_mlp) {
      best_mlp = lr.mlp_bias_norm;
      r.max_mlp_bias_layer = l;
    }
    r.layers.push_back(lr);
  }
  return r;
}

EmbeddingMeanStats embedding_mean_stats(const FoldedModel& model) {
  const Vector means = model.weights().w_e.rowwise().mean();
  return {means.cwiseAbs().mean(), means.cwiseAbs().maxCoeff()};
}

Matrix target_rows(const FoldedModel& model, const std::string& target, Eigen::Index max_rows) {
  const auto& w = model.weights();
  const auto& s = w.shape;
  auto cut = [max_rows](const auto& m) -> Matrix {
    return max_rows > 0 && m.rows() > max_rows ? Matrix(m.topRows(max_rows)) : Matrix(m);
  };
  static const std::regex attn_re(R"(attn:(\d+)\.(\d+)\.([QKVO]))");
  static const std::regex mlp_re(R"(mlp_out:(\d+))");
  std::smatch m;
  if (target == "embeddings") return cut(w.w_e);
  if (std::regex_match(target, m, attn_re)) {
    const int l = std::stoi(m[1]);
    const int h = std::stoi(m[2]);
    if (l >= s.n_layers || h >= s.n_heads) throw ArgumentError("diagnose target out of range: " + target);
    const auto& lw = w.layers[static_cast<std::size_t>(l)];
    const Matrix* src = &lw.w_q;
    switch (m[3].str()[0]) {
      case 'K': src = &lw.w_k; break;
      case 'V': src = &lw.w_v; break;
      case 'O': src = &lw.w_o; break;
      default: break;
    }
    return cut(src->middleRows(h * s.d_head, s.d_head));
  }
  if (std::regex_match(target, m, mlp_re)) {
    const int l = std::stoi(m[1]);
    if (l >= s.n_layers) throw ArgumentError("diagnose target out of range: " + target);
    return cut(w.layers[static_cast<std::size_t>(l)].w_out);
  }
  throw ArgumentError("unknown diagnose target: " + target);
}

HeatmapFiles heatmap_export(const Matrix& gram, const std::filesystem::path& stem, std::optional<Eigen::Index> cutout) {
  const Eigen::Index n = cutout ? std::min({*cutout, gram.rows(), gram.cols()}) : gram.rows();
  const Eigen::Index cols = cutout ? n : gram.cols();
  HeatmapFiles files{stem, stem};
  files.pgm.replace_extension(".pgm");
  files.csv.replace_extension(".csv");

  std::ofstream pgm(files.pgm, std::ios::binary | std::ios::trunc);
  if (!pgm) throw FilesystemError("cannot write " + files.pgm.string());
  pgm << "P5\n" << cols << " " << n << "\n255\n";
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double v = std::clamp(std::abs(gram(i, j)), 0.0, 1.0);
      pgm.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  if (!pgm) throw FilesystemError("write failed for " + files.pgm.string());

  std::ofstream csv(files.csv, std::ios::trunc);
  if (!csv) throw FilesystemError("cannot write " + files.csv.string());
  char buf[32];
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", gram(i, j));
      csv << (j ? "," : "") << buf;
    }
    csv << "\n";
  }
  if (!csv) throw FilesystemError("write failed for " + files.csv.string());
  return files;
}

}  // namespace vsalens
