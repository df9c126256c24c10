#include "vsalens/ann.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <queue>
#include <random>

namespace vsalens {

namespace {

constexpr char kMagic[5] = {'V', 'L', 'I', 'X', '1'};

bool hit_before(const Hit& a, const Hit& b) {
  if (a.cosine != b.cosine) return a.cosine > b.cosine;
  return a.label < b.label;
}

Vector normalized_query(const Vector& q, Eigen::Index dim) {
  if (q.size() != dim)
    throw ArgumentError("query has dim " + std::to_string(q.size()) + ", index has " + std::to_string(dim));
  const double n = q.norm();
  return n > 0.0 ? Vector(q / n) : Vector(Vector::Zero(dim));
}

Matrix unit_rows_of(const Matrix& m) {
  Matrix u = m;
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double n = u.row(i).norm();
    if (n > 0.0) u.row(i) /= n;
  }
  return u;
}

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
bool get(std::ifstream& in, T& v) {
  return static_cast<bool>(in.read(reinterpret_cast<char*>(&v), sizeof v));
}

}  // namespace

std::vector<Hit> brute_force_top_k(const Matrix& vectors, const std::vector<AtomLabel>& labels,
                                   const Vector& query, int k) {
  if (k <= 0) throw ArgumentError("top_k: k must be >= 1");
  if (static_cast<std::size_t>(vectors.rows()) != labels.size())
    throw ArgumentError("brute_force_top_k: label count does not match rows");
  const Vector q = normalized_query(query, vectors.cols());
  std::vector<Hit> hits(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = vectors.row(static_cast<Eigen::Index>(i));
    const double n = row.norm();
    hits[i] = {i, labels[i], n > 0.0 ? row.dot(q) / n : 0.0};
  }
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(k), hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), hit_before);
  hits.resize(keep);
  return hits;
}

void AtomIndex::Visited::reset(std::size_t n) {
  if (mark.size() != n) {
    mark.assign(n, 0);
    gen = 0;
  }
  if (++gen == 0) {
    std::fill(mark.begin(), mark.end(), 0);
    gen = 1;
  }
}

bool AtomIndex::Visited::test_and_set(std::uint32_t id) {
  if (mark[id] == gen) return true;
  mark[id] = gen;
  return false;
}

AtomIndex AtomIndex::build(const AtomTable& atoms, const IndexParams& params) {
  return build(atoms.vectors(), atoms.labels(), params);
}

AtomIndex AtomIndex::build(const std::vector<Vector>& vectors, std::vector<AtomLabel> labels,
                           const IndexParams& params) {
  if (vectors.empty()) throw ArgumentError("index build: no vectors");
  Matrix m(static_cast<Eigen::Index>(vectors.size()), vectors.front().size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != m.cols())
      throw ArgumentError("index build: vector " + std::to_string(i) + " has dim " +
                          std::to_string(vectors[i].size()) + ", expected " + std::to_string(m.cols()));
    m.row(static_cast<Eigen::Index>(i)) = vectors[i].transpose();
  }
  return build(m, std::move(labels), params);
}

AtomIndex AtomIndex::build(const Matrix& vectors, std::vector<AtomLabel> labels, const IndexParams& params) {
  if (vectors.rows() == 0) throw ArgumentError("index build: no vectors");
  if (static_cast<std::size_t>(vectors.rows()) != labels.size())
    throw ArgumentError("index build: label count does not match rows");
  if (params.degree < 2 || params.construction_beam < 1 || params.query_beam < 1)
    throw ArgumentError("index build: degree >= 2 and beams >= 1 required");
  if (!vectors.allFinite()) throw ArgumentError("index build: non-finite vectors");

  AtomIndex idx;
  idx.unit_ = unit_rows_of(vectors);
  idx.labels_ = std::move(labels);
  idx.params_ = params;
  const auto n = idx.labels_.size();
  idx.links_.resize(n);

  std::mt19937_64 rng(params.seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double ml = 1.0 / std::log(static_cast<double>(params.degree));
  Visited visited;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = std::max(uniform(rng), 1e-300);
    const int level = static_cast<int>(std::floor(-std::log(u) * ml));
    idx.insert(static_cast<std::uint32_t>(i), level, visited);
  }
  return idx;
}

std::uint32_t AtomIndex::greedy_descend(const Vector& q, int from_level, int to_level, std::uint32_t start) const {
  std::uint32_t cur = start;
  double best = sim(cur, q);
  for (int lc = from_level; lc > to_level; --lc) {
    for (bool changed = true; changed;) {
      changed = false;
      for (std::uint32_t nb : links_[cur][static_cast<std::size_t>(lc)]) {
        const double s = sim(nb, q);
        if (s > best || (s == best && nb < cur)) {
          best = s;
          cur = nb;
          changed = true;
        }
      }
    }
  }
  return cur;
}

std::vector<AtomIndex::Candidate> AtomIndex::search_level(const Vector& q, std::uint32_t entry, int beam,
                                                           int level, Visited& visited) const {
  // Ties resolved by id so traversal order is reproducible.
  auto worse = [](const Candidate& a, const Candidate& b) { return a.sim > b.sim || (a.sim == b.sim && a.id < b.id); };
  auto better = [](const Candidate& a, const Candidate& b) { return a.sim < b.sim || (a.sim == b.sim && a.id > b.id); };
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(better)> frontier(better);  // best on top
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(worse)> results(worse);    // worst on top

  visited.reset(labels_.size());
  visited.test_and_set(entry);
  const Candidate e{sim(entry, q), entry};
  frontier.push(e);
  results.push(e);
  while (!frontier.empty()) {
    const Candidate c = frontier.top();
    if (static_cast<int>(results.size()) >= beam && c.sim < results.top().sim) break;
    frontier.pop();
    for (std::uint32_t nb : links_[c.id][static_cast<std::size_t>(level)]) {
      if (visited.test_and_set(nb)) continue;
      const Candidate cand{sim(nb, q), nb};
      if (static_cast<int>(results.size()) < beam || cand.sim > results.top().sim) {
        frontier.push(cand);
        results.push(cand);
        if (static_cast<int>(results.size()) > beam) results.pop();
      }
    }
  }
  std::vector<Candidate> out;
  out.reserve(results.size());
  while (!results.empty()) {
    out.push_back(results.top());
    results.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<std::uint32_t> AtomIndex::select_neighbors(std::uint32_t base, std::vector<Candidate> cands,
                                                       int m) const {
  std::sort(cands.begin(), cands.end(),
            [](const Candidate& a, const Candidate& b) { return a.sim > b.sim || (a.sim == b.sim && a.id < b.id); });
  std::vector<std::uint32_t> kept;
  std::vector<std::uint32_t> pruned;
  for (const auto& c : cands) {
    if (c.id == base) continue;
    if (static_cast<int>(kept.size()) >= m) break;
    bool diverse = true;
    for (std::uint32_t r : kept)
      if (unit_.row(c.id).dot(unit_.row(r)) > c.sim) {
        diverse = false;
        break;
      }
    (diverse ? kept : pruned).push_back(c.id);
  }
  for (std::size_t i = 0; i < pruned.size() && static_cast<int>(kept.size()) < m; ++i) kept.push_back(pruned[i]);
  return kept;
}

void AtomIndex::insert(std::uint32_t id, int level, Visited& visited) {
  links_[id].assign(static_cast<std::size_t>(level + 1), {});
  if (max_level_ < 0) {
    entry_ = id;
    max_level_ = level;
    return;
  }
  const Vector q = unit_.row(id).transpose();
  std::uint32_t ep = greedy_descend(q, max_level_, level, entry_);
  for (int lc = std::min(level, max_level_); lc >= 0; --lc) {
    const auto found = search_level(q, ep, params_.construction_beam, lc, visited);
    const int m = lc == 0 ? 2 * params_.degree : params_.degree;
    auto& mine = links_[id][static_cast<std::size_t>(lc)];
    mine = select_neighbors(id, found, params_.degree);
    for (std::uint32_t nb : mine) {
      auto& theirs = links_[nb][static_cast<std::size_t>(lc)];
      theirs.push_back(id);
      if (static_cast<int>(theirs.size()) > m) {
        std::vector<Candidate> c;
        const Vector base = unit_.row(nb).transpose();
        for (std::uint32_t x : theirs) c.push_back({sim(x, base), x});
        // Overflow keeps the m nearest; the diversity heuristic here costs O(m^2) per link.
        std::partial_sort(c.begin(), c.begin() + m, c.end(), [](const Candidate& a, const Candidate& b) {
          return a.sim > b.sim || (a.sim == b.sim && a.id < b.id);
        });
        theirs.clear();
        for (int i = 0; i < m; ++i) theirs.push_back(c[static_cast<std::size_t>(i)].id);
      }
    }
    ep = found.front().id;
  }
  if (level > max_level_) {
    entry_ = id;
    max_level_ = level;
  }
}

std::vector<Hit> AtomIndex::top_k(const Vector& query, int k, int query_beam) const {
  if (k <= 0) throw ArgumentError("top_k: k must be >= 1");
  const Vector q = normalized_query(query, dim());
  if (labels_.size() <= params_.exhaustive_max || q.squaredNorm() == 0.0)
    return brute_force_top_k(unit_, labels_, q, k);

  const int beam = std::max(query_beam > 0 ? query_beam : params_.query_beam, k);
  const std::uint32_t ep = greedy_descend(q, max_level_, 0, entry_);
  Visited visited;
  const auto found = search_level(q, ep, beam, 0, visited);
  std::vector<Hit> hits;
  hits.reserve(found.size());
  for (const auto& c : found) hits.push_back({c.id, labels_[c.id], c.sim});
  std::sort(hits.begin(), hits.end(), hit_before);
  if (hits.size() > static_cast<std::size_t>(k)) hits.resize(static_cast<std::size_t>(k));
  return hits;
}

void AtomIndex::save(const std::filesystem::path& path, const std::string& content_hash) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FilesystemError("cannot write index cache " + path.string());
  out.write(kMagic, sizeof kMagic);
  const auto hash_len = static_cast<std::uint32_t>(content_hash.size());
  put(out, hash_len);
  out.write(content_hash.data(), hash_len);
  put(out, static_cast<std::int32_t>(params_.degree));
  put(out, static_cast<std::int32_t>(params_.construction_beam));
  put(out, static_cast<std::int32_t>(params_.query_beam));
  put(out, params_.seed);
  put(out, static_cast<std::uint64_t>(params_.exhaustive_max));
  put(out, static_cast<std::uint64_t>(labels_.size()));
  put(out, static_cast<std::uint64_t>(dim()));
  put(out, static_cast<std::int32_t>(max_level_));
  put(out, entry_);
  for (const auto& node : links_) {
    put(out, static_cast<std::uint32_t>(node.size()));
    for (const auto& lvl : node) {
      put(out, static_cast<std::uint32_t>(lvl.size()));
      out.write(reinterpret_cast<const char*>(lvl.data()), static_cast<std::streamsize>(lvl.size() * 4));
    }
  }
  if (!out) throw FilesystemError("write failed for " + path.string());
}

bool AtomIndex::load(const std::filesystem::path& path, const Matrix& vectors, std::vector<AtomLabel> labels,
                     const std::string& content_hash, AtomIndex* out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  char magic[5];
  if (!in.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0) return false;
  std::uint32_t hash_len = 0;
  if (!get(in, hash_len) || hash_len > 1024) return false;
  std::string hash(hash_len, '\0');
  if (!in.read(hash.data(), hash_len) || hash != content_hash) return false;

  AtomIndex idx;
  std::int32_t degree, cbeam, qbeam, max_level;
  std::uint64_t exhaustive, n, d;
  if (!get(in, degree) || !get(in, cbeam) || !get(in, qbeam) || !get(in, idx.params_.seed) ||
      !get(in, exhaustive) || !get(in, n) || !get(in, d) || !get(in, max_level) || !get(in, idx.entry_))
    return false;
  if (n != labels.size() || static_cast<Eigen::Index>(n) != vectors.rows() ||
      static_cast<Eigen::Index>(d) != vectors.cols() || idx.entry_ >= n)
    return false;
  idx.params_.degree = degree;
  idx.params_.construction_beam = cbeam;
  idx.params_.query_beam = qbeam;
  idx.params_.exhaustive_max = static_cast<std::size_t>(exhaustive);
  idx.max_level_ = max_level;
  idx.links_.resize(n);
  for (auto& node : idx.links_) {
    std::uint32_t levels = 0;
    if (!get(in, levels) || levels > 64) return false;
    node.resize(levels);
    for (auto& lvl : node) {
      std::uint32_t cnt = 0;
      if (!get(in, cnt) || cnt > n) return false;
      lvl.resize(cnt);
      if (!in.read(reinterpret_cast<char*>(lvl.data()), static_cast<std::streamsize>(cnt) * 4)) return false;
      for (auto id : lvl)
        if (id >= n) return false;
    }
  }
  idx.unit_ = unit_rows_of(vectors);
  idx.labels_ = std::move(labels);
  *out = std::move(idx);
  return true;
}

}  // namespace vsalens
