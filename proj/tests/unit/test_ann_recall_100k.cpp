#include <set>

#include "doctest.h"
#include "vsalens/ann.hpp"
#include "vsalens/random.hpp"

using namespace vsalens;

// Default index parameters at 100k atoms; slow (about 1.5 minutes on one core).
TEST_CASE("recall@10 >= 0.95 over 1000 queries at 100k atoms") {
  const Eigen::Index n = 100000;
  const Matrix data = gaussian_matrix(n, 32, 100);
  const Matrix queries = gaussian_matrix(1000, 32, 101);
  std::vector<AtomLabel> labels;
  for (Eigen::Index i = 0; i < n; ++i) labels.push_back(AtomLabel::mlp(0, static_cast<int>(i)));
  const auto idx = AtomIndex::build(data, labels);

  // Exact answers from one GEMM instead of 1000 scans.
  const Matrix unit_data = unit_rows(data);
  const Matrix unit_q = unit_rows(queries);
  const Matrix sims = unit_q * unit_data.transpose();

  double hits = 0;
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    std::vector<std::pair<double, Eigen::Index>> row;
    row.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) row.emplace_back(-sims(q, i), i);
    std::partial_sort(row.begin(), row.begin() + 10, row.end());
    std::set<std::size_t> truth;
    for (int i = 0; i < 10; ++i) truth.insert(static_cast<std::size_t>(row[static_cast<std::size_t>(i)].second));
    for (const auto& h : idx.top_k(queries.row(q).transpose(), 10)) hits += truth.count(h.id);
  }
  const double recall = hits / 10000.0;
  MESSAGE("recall@10: " << recall);
  CHECK(recall >= 0.95);
}
