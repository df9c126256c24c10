#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "vsalens/ann.hpp"
#include "vsalens/hashing.hpp"
#include "vsalens/random.hpp"

using namespace vsalens;
namespace fs = std::filesystem;

namespace {

std::vector<AtomLabel> mlp_labels(std::size_t n) {
  std::vector<AtomLabel> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(AtomLabel::mlp(0, static_cast<int>(i)));
  return out;
}

double recall_at(const AtomIndex& idx, const Matrix& data, const Matrix& queries, int k, int beam) {
  const auto labels = mlp_labels(static_cast<std::size_t>(data.rows()));
  double hit = 0;
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    const Vector query = queries.row(q).transpose();
    std::set<std::size_t> truth;
    for (const auto& h : brute_force_top_k(data, labels, query, k)) truth.insert(h.id);
    for (const auto& h : idx.top_k(query, k, beam)) hit += truth.count(h.id);
  }
  return hit / static_cast<double>(queries.rows() * k);
}

}  // namespace

TEST_CASE("tiny index returns exact neighbours") {
  Matrix m(3, 2);
  m << 1, 0, 0, 1, 1, 1;
  const auto idx = AtomIndex::build(m, mlp_labels(3));
  const auto hits = idx.top_k(Vector::Unit(2, 0), 3);
  REQUIRE(hits.size() == 3);
  CHECK(hits[0].id == 0);
  CHECK(hits[0].cosine == doctest::Approx(1.0));
  CHECK(hits[1].id == 2);
  CHECK(hits[1].cosine == doctest::Approx(std::sqrt(0.5)));
  CHECK(hits[2].id == 1);
  CHECK(hits[2].cosine == doctest::Approx(0.0));
}

TEST_CASE("small indexes equal the exact scan") {
  const Matrix data = gaussian_matrix(800, 24, 1);
  const Matrix queries = gaussian_matrix(30, 24, 2);
  const auto labels = mlp_labels(800);
  const auto idx = AtomIndex::build(data, labels);
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    const Vector query = queries.row(q).transpose();
    const auto a = idx.top_k(query, 10);
    const auto b = brute_force_top_k(data, labels, query, 10);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].id == b[i].id);
      CHECK(a[i].cosine == doctest::Approx(b[i].cosine).epsilon(1e-12));
    }
  }
}

TEST_CASE("edge cases") {
  const Matrix data = gaussian_matrix(5, 8, 3);
  const auto idx = AtomIndex::build(data, mlp_labels(5));

  // Zero query: every cosine is 0, ties broken by label.
  const auto zero = idx.top_k(Vector::Zero(8), 5);
  REQUIRE(zero.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(zero[i].id == i);
    CHECK(zero[i].cosine == 0.0);
  }
  CHECK(idx.top_k(Vector::Ones(8), 50).size() == 5);
  CHECK_THROWS_AS(idx.top_k(Vector::Ones(8), 0), ArgumentError);
  CHECK_THROWS_AS(idx.top_k(Vector::Ones(7), 1), ArgumentError);
  CHECK_THROWS_AS(AtomIndex::build(std::vector<Vector>{Vector::Ones(3), Vector::Ones(4)}, mlp_labels(2)),
                  ArgumentError);
  CHECK_THROWS_AS(AtomIndex::build(data, mlp_labels(4)), ArgumentError);
  CHECK_THROWS_AS(AtomIndex::build(Matrix(0, 4), {}), ArgumentError);
}

TEST_CASE("graph index on 20k vectors") {
  // doctest re-enters the body once per subcase; build the index only once.
  static const Matrix data = gaussian_matrix(20000, 32, 4);
  static const Matrix queries = gaussian_matrix(100, 32, 5);
  static const IndexParams p = [] {
    IndexParams ip;
    ip.construction_beam = 64;
    ip.seed = 9;
    return ip;
  }();
  static const auto idx = AtomIndex::build(data, mlp_labels(20000), p);

  SUBCASE("recall@10") {
    const double r = recall_at(idx, data, queries, 10, 128);
    MESSAGE("recall@10 at 20k: " << r);
    CHECK(r >= 0.95);
  }
  SUBCASE("larger beams do not lose recall") {
    const double r16 = recall_at(idx, data, queries, 10, 16);
    const double r64 = recall_at(idx, data, queries, 10, 64);
    const double r256 = recall_at(idx, data, queries, 10, 256);
    CHECK(r64 >= r16 - 0.01);
    CHECK(r256 >= r64 - 0.01);
  }
  SUBCASE("level-0 links are bounded and not self-loops") {
    for (std::size_t n = 0; n < idx.size(); n += 997) {
      const auto& levels = idx.neighbors(n);
      REQUIRE_FALSE(levels.empty());
      CHECK(levels[0].size() <= static_cast<std::size_t>(2 * p.degree));
      for (auto id : levels[0]) CHECK(id != n);
    }
  }
  SUBCASE("build is deterministic") {
    const auto again = AtomIndex::build(data, mlp_labels(20000), p);
    for (Eigen::Index q = 0; q < 10; ++q) {
      const Vector query = queries.row(q).transpose();
      const auto a = idx.top_k(query, 10);
      const auto b = again.top_k(query, 10);
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].id == b[i].id);
    }
  }
  SUBCASE("cache round-trip") {
    const auto dir = fs::temp_directory_path() / "vsalens_test_ann";
    fs::create_directories(dir);
    const auto path = dir / "idx.bin";
    const auto hash = content_hash(data, mlp_labels(20000));
    idx.save(path, hash);
    AtomIndex loaded;
    REQUIRE(AtomIndex::load(path, data, mlp_labels(20000), hash, &loaded));
    for (Eigen::Index q = 0; q < 10; ++q) {
      const Vector query = queries.row(q).transpose();
      const auto a = idx.top_k(query, 10);
      const auto b = loaded.top_k(query, 10);
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].id == b[i].id);
    }
    AtomIndex untouched;
    CHECK_FALSE(AtomIndex::load(path, data, mlp_labels(20000), "other", &untouched));
    CHECK(untouched.size() == 0);
    CHECK_FALSE(AtomIndex::load(dir / "absent.bin", data, mlp_labels(20000), hash, &untouched));
    std::ofstream(dir / "junk.bin") << "VLIX1 but truncated";
    CHECK_FALSE(AtomIndex::load(dir / "junk.bin", data, mlp_labels(20000), hash, &untouched));
  }
}
