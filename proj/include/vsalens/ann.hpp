#pragma once

// Cosine nearest-neighbour search over labelled vectors: a hierarchical
// navigable small-world graph plus the exact scan it is checked against.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vsalens/weights.hpp"

namespace vsalens {

struct IndexParams {
  int degree = 32;               // max links per node on upper levels; level 0 allows 2x
  int construction_beam = 200;
  int query_beam = 128;
  std::uint64_t seed = 0;
  // Indexes with at most this many vectors answer every query by exact scan.
  std::size_t exhaustive_max = 1000;
};

struct Hit {
  std::size_t id = 0;  // row in the indexed matrix
  AtomLabel label;
  double cosine = 0.0;
};

// Sorted by descending cosine, then ascending label.
std::vector<Hit> brute_force_top_k(const Matrix& vectors, const std::vector<AtomLabel>& labels,
                                   const Vector& query, int k);

class AtomIndex {
 public:
  static AtomIndex build(const Matrix& vectors, std::vector<AtomLabel> labels, const IndexParams& params = {});
  static AtomIndex build(const AtomTable& atoms, const IndexParams& params = {});
  // Throws ArgumentError when the vectors disagree on dimension.
  static AtomIndex build(const std::vector<Vector>& vectors, std::vector<AtomLabel> labels,
                         const IndexParams& params = {});

  // `query_beam` overrides params().query_beam when > 0.
  std::vector<Hit> top_k(const Vector& query, int k, int query_beam = 0) const;

  std::size_t size() const { return labels_.size(); }
  Eigen::Index dim() const { return unit_.cols(); }
  const IndexParams& params() const { return params_; }
  const std::vector<std::vector<std::uint32_t>>& neighbors(std::size_t node) const { return links_[node]; }

  // Binary cache, magic "VLIX1". load() returns false (and leaves *out
  // untouched) when the file is absent, malformed, or built for other vectors.
  void save(const std::filesystem::path& path, const std::string& content_hash) const;
  static bool load(const std::filesystem::path& path, const Matrix& vectors, std::vector<AtomLabel> labels,
                   const std::string& content_hash, AtomIndex* out);

 private:
  struct Candidate {
    double sim;
    std::uint32_t id;
  };
  // Generation-stamped visited marks, reused across searches by one caller.
  struct Visited {
    std::vector<std::uint32_t> mark;
    std::uint32_t gen = 0;
    void reset(std::size_t n);
    bool test_and_set(std::uint32_t id);
  };

  double sim(std::uint32_t a, const Vector& q) const { return unit_.row(a).dot(q); }
  std::uint32_t greedy_descend(const Vector& q, int from_level, int to_level, std::uint32_t start) const;
  std::vector<Candidate> search_level(const Vector& q, std::uint32_t entry, int beam, int level,
                                      Visited& visited) const;
  std::vector<std::uint32_t> select_neighbors(std::uint32_t base, std::vector<Candidate> cands, int m) const;
  void insert(std::uint32_t id, int level, Visited& visited);

  Matrix unit_;
  std::vector<AtomLabel> labels_;
  IndexParams params_;
  std::vector<std::vector<std::vector<std::uint32_t>>> links_;  // node -> level -> ids
  std::uint32_t entry_ = 0;
  int max_level_ = -1;
};

}  // namespace vsalens
