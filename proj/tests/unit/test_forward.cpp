#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "vsalens/forward.hpp"
#include "vsalens/selftest.hpp"
#include "vsalens/weights.hpp"

using namespace vsalens;
namespace fs = std::filesystem;

namespace {

const fs::path kTiny = VSALENS_FIXTURES "/tiny_gpt2.safetensors";

nlohmann::json reference() {
  std::ifstream in(VSALENS_FIXTURES "/tiny_gpt2_reference.json");
  return nlohmann::json::parse(in);
}

Matrix to_matrix(const nlohmann::json& rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  return (a - b).cwiseAbs().maxCoeff();
}

ModelShape mini() {
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

Vector ln(const Vector& x, const LayerNormParams& p, double eps) {
  const Vector c = x.array() - x.mean();
  const double sd = std::sqrt(c.squaredNorm() / static_cast<double>(x.size()) + eps);
  return (c / sd).cwiseProduct(p.scale) + p.bias;
}

}  // namespace

TEST_CASE("gelu matches the tanh formula") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(1.0) == doctest::Approx(0.8411919906));
  CHECK(gelu(-1.0) == doctest::Approx(-0.1588080094));
  CHECK(gelu(10.0) == doctest::Approx(10.0));
}

TEST_CASE("forward matches the reference implementation") {
  const auto ref = reference();
  const auto raw = load_checkpoint(kTiny);
  const auto folded = fold_layernorm(raw);
  const auto prefixed = load_checkpoint(VSALENS_FIXTURES "/tiny_gpt2_prefixed.safetensors");
  const AblationSpec ab{ref["ablation"]["layer"].get<int>(), ref["ablation"]["neuron"].get<int>()};

  for (const auto& p : ref["prompts"]) {
    const auto ids = p["ids"].get<std::vector<int>>();
    const Matrix want = to_matrix(p["logits"]);
    const auto t = forward(raw, ids, true);
    CHECK(max_abs_diff(t.logits, want) < 1e-9);
    CHECK(max_abs_diff(forward(folded, ids).logits, want) < 1e-9);
    CHECK(max_abs_diff(forward(prefixed, ids).logits, want) < 1e-9);
    REQUIRE(t.residuals.size() == 3);
    for (std::size_t b = 0; b < p["residuals"].size(); ++b)
      CHECK(max_abs_diff(t.residuals[b], to_matrix(p["residuals"][b])) < 1e-9);
    const AblationSpec one[] = {ab};
    CHECK(max_abs_diff(forward(folded, ids, false, one).logits, to_matrix(p["ablated_logits"])) < 1e-9);
  }
}

TEST_CASE("single-token forward agrees with a hand-written pass") {
  const auto w = random_mini_model(mini(), 11);
  const int id = 7;
  const auto& s = w.shape;
  Vector x = (w.w_e.row(id) + w.w_pos.row(0)).transpose();
  for (const auto& l : w.layers) {
    // One position: every head attends to itself with weight 1.
    const Vector h = ln(x, l.ln1, s.ln_eps);
    const Vector v = l.w_v * h + l.b_v;
    x += l.w_o.transpose() * v + l.b_o;
    const Vector h2 = ln(x, l.ln2, s.ln_eps);
    Vector a = l.w_in * h2 + l.b_in;
    for (auto& e : a) e = gelu(e);
    x += l.w_out.transpose() * a + l.b_out;
  }
  const Vector logits = w.w_u * ln(x, w.ln_f, s.ln_eps) + (w.b_u.size() ? w.b_u : Vector::Zero(s.vocab));
  const int ids[] = {id};
  const auto t = forward(w, ids);
  CHECK((t.logits.row(0).transpose() - logits).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("causality and attention rows") {
  const auto model = fold_layernorm(random_mini_model(mini(), 12));
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> tok(0, 49);
  std::vector<int> ids(16);
  for (auto& t : ids) t = tok(rng);
  const auto full = forward(model, ids, true);
  for (std::size_t n = 1; n < ids.size(); n += 5) {
    const auto part = forward(model, std::span(ids.data(), n));
    CHECK(max_abs_diff(part.logits, full.logits.topRows(static_cast<Eigen::Index>(n))) < 1e-10);
  }
  REQUIRE(full.attention.size() == 2);
  for (const auto& layer : full.attention)
    for (const auto& a : layer) {
      CHECK((a.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
      for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = i + 1; j < a.cols(); ++j) CHECK(a(i, j) == 0.0);
    }
  CHECK(forward(model, ids).logits == full.logits);
}

TEST_CASE("ablation is local to the ablated layer and positions") {
  const auto model = fold_layernorm(random_mini_model(mini(), 13));
  const std::vector<int> ids{4, 9, 2, 33, 17, 8};
  const auto clean = forward(model, ids, true);
  const AblationSpec late[] = {{1, 10, AblationMode::ZeroActivation, {3}}};
  const auto t = forward(model, ids, true, late);
  // Layer 1's MLP only writes boundary 2 (final).
  CHECK(t.residuals[0] == clean.residuals[0]);
  CHECK(t.residuals[1] == clean.residuals[1]);
  for (Eigen::Index p = 0; p < 6; ++p)
    if (p != 3) CHECK(t.residuals[2].row(p) == clean.residuals[2].row(p));
  CHECK(t.residuals[2].row(3) != clean.residuals[2].row(3));

  // Zero out-weights make the neuron a no-op.
  auto w = random_mini_model(mini(), 14);
  w.layers[0].w_out.row(5).setZero();
  const auto quiet = fold_layernorm(w);
  const auto d = logit_delta(quiet, ids, 3, {0, 5});
  CHECK(d.delta == 0.0);
  CHECK(d.clean_logit == d.ablated_logit);

  const auto real = logit_delta(model, ids, 3, {0, 5});
  CHECK(real.delta == doctest::Approx(real.ablated_logit - real.clean_logit));
}

TEST_CASE("forward input errors") {
  const auto model = fold_layernorm(random_mini_model(mini(), 15));
  CHECK_THROWS_AS(forward(model, std::vector<int>{}), InputError);
  CHECK_THROWS_AS(forward(model, std::vector<int>{50}), InputError);
  CHECK_THROWS_AS(forward(model, std::vector<int>{-1}), InputError);
  CHECK_THROWS_AS(forward(model, std::vector<int>(17, 1)), ContextLengthError);
  const AblationSpec bad_layer[] = {{2, 0}};
  CHECK_THROWS_AS(forward(model, std::vector<int>{1}, false, bad_layer), ArgumentError);
  const AblationSpec bad_neuron[] = {{0, 64}};
  CHECK_THROWS_AS(forward(model, std::vector<int>{1}, false, bad_neuron), ArgumentError);
  const AblationSpec bad_pos[] = {{0, 1, AblationMode::ZeroActivation, {1}}};
  CHECK_THROWS_AS(forward(model, std::vector<int>{1}, false, bad_pos), ArgumentError);
}

TEST_CASE("residual mean statistics agree with a direct computation") {
  const auto model = fold_layernorm(random_mini_model(mini(), 16));
  const std::vector<std::vector<int>> prompts{{1, 2, 3}, {40, 5}, {9}};
  const auto stats = residual_mean_stats(model, prompts);
  REQUIRE(stats.size() == 3);
  std::vector<double> want(3, 0.0);
  double n = 0;
  for (const auto& p : prompts) {
    const auto t = forward(model, p, true);
    for (std::size_t b = 0; b < 3; ++b)
      for (Eigen::Index i = 0; i < t.residuals[b].rows(); ++i) want[b] += std::abs(t.residuals[b].row(i).mean());
    n += static_cast<double>(p.size());
  }
  for (std::size_t b = 0; b < 3; ++b) CHECK(stats[b] == doctest::Approx(want[b] / n));
  CHECK_THROWS_AS(residual_mean_stats(model, {}), ArgumentError);
}

TEST_CASE("prompt id files") {
  const auto dir = fs::temp_directory_path() / "vsalens_test_forward";
  fs::create_directories(dir);
  const auto p = dir / "ids.txt";
  std::ofstream(p) << "# comment\n1 2 3\n\n  40\t5\n";
  const auto prompts = read_prompt_ids(p);
  REQUIRE(prompts.size() == 2);
  CHECK(prompts[0] == std::vector<int>{1, 2, 3});
  CHECK(prompts[1] == std::vector<int>{40, 5});

  std::ofstream(dir / "bad.txt") << "1 x 3\n";
  CHECK_THROWS_AS(read_prompt_ids(dir / "bad.txt"), InputError);
  std::ofstream(dir / "empty.txt") << "# nothing\n";
  CHECK_THROWS_AS(read_prompt_ids(dir / "empty.txt"), InputError);
  CHECK_THROWS_AS(read_prompt_ids(dir / "missing.txt"), FilesystemError);

  const auto fig = read_prompt_ids(VSALENS_FIXTURES "/prompts/fig2_i_was_listening.ids");
  CHECK(fig[0] == std::vector<int>{40, 373, 8680});
  CHECK(read_prompt_ids(VSALENS_FIXTURES "/prompts/residual20.ids").size() == 20);
}

TEST_CASE("residual means with every block zeroed equal the input means") {
  auto w = random_mini_model(mini(), 17, false);
  for (auto& l : w.layers) {
    l.w_o.setZero();
    l.b_o.setZero();
    l.w_out.setZero();
    l.b_out.setZero();
  }
  const auto model = fold_layernorm(w);
  const std::vector<std::vector<int>> prompts{{3, 1, 4}, {1, 5}};
  double want = 0.0;
  for (const auto& p : prompts)
    for (std::size_t t = 0; t < p.size(); ++t)
      want += std::abs((w.w_e.row(p[t]) + w.w_pos.row(static_cast<Eigen::Index>(t))).mean());
  want /= 5.0;
  for (double s : residual_mean_stats(model, prompts)) CHECK(s == doctest::Approx(want));
}
