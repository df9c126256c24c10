#include "vsalens/vsa.hpp"

#include <cmath>
#include <string>

#include "vsalens/random.hpp"

namespace vsalens::vsa {

namespace {

void require_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b)
    throw ArgumentError(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                        " vs " + std::to_string(b) + ")");
}

ConceptVector sum_of(std::span<const ConceptVector> atoms, double sign) {
  if (atoms.empty()) throw ArgumentError("boolean neuron needs at least one atom");
  Vector acc = Vector::Zero(atoms.front().dim());
  for (const auto& a : atoms) {
    require_same_dim(acc.size(), a.dim(), "boolean neuron");
    acc += sign * a.values();
  }
  return ConceptVector(std::move(acc));
}

}  // namespace

ConceptVector::ConceptVector(Vector values) : values_(std::move(values)) {
  if (values_.size() == 0) throw InvalidDimensionError("concept vector must have dim >= 1");
  if (!values_.allFinite()) throw ArgumentError("concept vector has non-finite entries");
}

ConceptVector ConceptVector::zeros(Eigen::Index dim) { return ConceptVector(Vector::Zero(dim)); }

ConceptVector ConceptVector::operator+(const ConceptVector& other) const {
  require_same_dim(dim(), other.dim(), "add");
  return ConceptVector(values_ + other.values_);
}

ConceptVector ConceptVector::operator-(const ConceptVector& other) const {
  require_same_dim(dim(), other.dim(), "subtract");
  return ConceptVector(values_ - other.values_);
}

ConceptVector ConceptVector::operator*(double scale) const { return ConceptVector(values_ * scale); }

double dot(const ConceptVector& a, const ConceptVector& b) {
  require_same_dim(a.dim(), b.dim(), "dot");
  return a.values().dot(b.values());
}

double cosine(const ConceptVector& a, const ConceptVector& b) {
  require_same_dim(a.dim(), b.dim(), "cosine");
  return vsalens::cosine(a.values(), b.values());
}

std::vector<ConceptVector> sample_concept_vectors(int count, int dim, std::uint64_t seed) {
  if (dim < 2) throw InvalidDimensionError("sample_concept_vectors: dim must be >= 2");
  if (count < 1) throw ArgumentError("sample_concept_vectors: count must be >= 1");
  const Matrix m = unit_rows(gaussian_matrix(count, dim, seed));
  std::vector<ConceptVector> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.emplace_back(Vector(m.row(i).transpose()));
  return out;
}

ConceptVector bundle(std::span<const ConceptVector> atoms, std::span<const int> signs) {
  if (atoms.empty()) throw ArgumentError("bundle: empty atom list");
  if (atoms.size() != signs.size())
    throw ArgumentError("bundle: " + std::to_string(atoms.size()) + " atoms but " +
                        std::to_string(signs.size()) + " signs");
  Vector acc = Vector::Zero(atoms.front().dim());
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    require_same_dim(acc.size(), atoms[i].dim(), "bundle");
    if (signs[i] != 1 && signs[i] != -1) throw ArgumentError("bundle: signs must be +1 or -1");
    acc += static_cast<double>(signs[i]) * atoms[i].values();
  }
  return ConceptVector(std::move(acc));
}

MembershipThreshold::MembershipThreshold(double lambda) : lambda_(lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw ArgumentError("membership threshold must be a positive finite number");
}

bool contains(const ConceptVector& bundle, const ConceptVector& probe, MembershipThreshold threshold) {
  return dot(bundle, probe) >= threshold.lambda();
}

BindingMatrix BindingMatrix::random(int dim, std::uint64_t seed) {
  if (dim < 2) throw InvalidDimensionError("binding matrix: dim must be >= 2");
  const Matrix g = gaussian_matrix(dim, dim, seed);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Sign fix on the columns makes the distribution Haar rather than QR-biased.
  for (int j = 0; j < dim; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return BindingMatrix(Matrix(q), seed);
}

BindingMatrix BindingMatrix::random_unit_rows(int dim, std::uint64_t seed) {
  if (dim < 2) throw InvalidDimensionError("binding matrix: dim must be >= 2");
  return BindingMatrix(unit_rows(gaussian_matrix(dim, dim, seed)), seed);
}

BindingMatrix BindingMatrix::identity(int dim) {
  if (dim < 1) throw InvalidDimensionError("binding matrix: dim must be >= 1");
  return BindingMatrix(Matrix::Identity(dim, dim), 0);
}

double BindingMatrix::max_offdiag_gram() const {
  Matrix g = rows_.transpose() * rows_;
  g.diagonal().setZero();
  return g.cwiseAbs().maxCoeff();
}

bool BindingMatrix::is_nearly_orthogonal(double bound) const {
  for (Eigen::Index i = 0; i < rows_.rows(); ++i)
    if (std::abs(rows_.row(i).norm() - 1.0) > 1e-6) return false;
  return max_offdiag_gram() < bound;
}

ConceptVector bind(const BindingMatrix& m, const ConceptVector& v) {
  require_same_dim(m.dim(), v.dim(), "bind");
  return ConceptVector(m.rows() * v.values());
}

ConceptVector unbind(const BindingMatrix& m, const ConceptVector& v) {
  require_same_dim(m.dim(), v.dim(), "unbind");
  return ConceptVector(m.rows().transpose() * v.values());
}

BooleanNeuron BooleanNeuron::make_and(std::span<const ConceptVector> atoms) {
  const double k = static_cast<double>(atoms.size());
  return BooleanNeuron{sum_of(atoms, 1.0), -(k - 0.5), Gate::And};
}

BooleanNeuron BooleanNeuron::make_or(std::span<const ConceptVector> atoms) {
  return BooleanNeuron{sum_of(atoms, 1.0), -0.5, Gate::Or};
}

BooleanNeuron BooleanNeuron::make_not(std::span<const ConceptVector> present,
                                      std::span<const ConceptVector> absent) {
  ConceptVector w = sum_of(present, 1.0);
  if (!absent.empty()) w = w + sum_of(absent, -1.0);
  const double k = static_cast<double>(present.size());
  return BooleanNeuron{std::move(w), -(k - 0.5), Gate::NotAugmented};
}

double boolean_neuron_eval(const BooleanNeuron& neuron, const ConceptVector& input) {
  return std::max(0.0, dot(neuron.weights, input) + neuron.bias);
}

SuperpositionTable or_set_superposition_demo(std::span<const ConceptVector> concepts,
                                             const std::vector<std::vector<int>>& or_sets,
                                             const std::vector<std::vector<bool>>& inputs,
                                             std::uint64_t seed) {
  const int n = static_cast<int>(concepts.size());
  if (n == 0) throw ArgumentError("superposition demo: no concepts");
  const Eigen::Index dim = concepts.front().dim();

  std::vector<int> owner(static_cast<std::size_t>(n), -1);
  for (std::size_t s = 0; s < or_sets.size(); ++s) {
    if (or_sets[s].empty()) throw ArgumentError("superposition demo: empty OR-set");
    for (int c : or_sets[s]) {
      if (c < 0 || c >= n) throw ArgumentError("superposition demo: concept index out of range");
      if (owner[static_cast<std::size_t>(c)] != -1)
        throw ArgumentError("superposition demo: OR-sets overlap at concept " + std::to_string(c));
      owner[static_cast<std::size_t>(c)] = static_cast<int>(s);
    }
  }
  for (int c = 0; c < n; ++c)
    if (owner[static_cast<std::size_t>(c)] == -1)
      throw ArgumentError("superposition demo: concept " + std::to_string(c) + " not in any OR-set");

  std::vector<BooleanNeuron> or_neurons;
  for (const auto& set : or_sets) {
    std::vector<ConceptVector> members;
    for (int c : set) members.push_back(concepts[static_cast<std::size_t>(c)]);
    or_neurons.push_back(BooleanNeuron::make_or(members));
  }
  const auto outputs =
      sample_concept_vectors(static_cast<int>(or_sets.size()), static_cast<int>(dim), seed);

  std::vector<BooleanNeuron> recoverers;
  for (int c = 0; c < n; ++c) {
    const std::vector<ConceptVector> pair{outputs[static_cast<std::size_t>(owner[static_cast<std::size_t>(c)])],
                                          concepts[static_cast<std::size_t>(c)]};
    recoverers.push_back(BooleanNeuron::make_and(pair));
  }

  SuperpositionTable table;
  for (const auto& input : inputs) {
    if (static_cast<int>(input.size()) != n)
      throw ArgumentError("superposition demo: presence bitmap has wrong length");
    std::vector<int> per_set(or_sets.size(), 0);
    ConceptVector stream = ConceptVector::zeros(dim);
    for (int c = 0; c < n; ++c) {
      if (!input[static_cast<std::size_t>(c)]) continue;
      if (++per_set[static_cast<std::size_t>(owner[static_cast<std::size_t>(c)])] > 1)
        throw DemoAssumptionViolated("superposition demo: two concepts of OR-set " +
                                     std::to_string(owner[static_cast<std::size_t>(c)]) + " co-occur");
      stream = stream + concepts[static_cast<std::size_t>(c)];
    }

    SuperpositionRow row;
    row.input = input;
    ConceptVector written = stream;
    for (std::size_t s = 0; s < or_neurons.size(); ++s) {
      const double a = boolean_neuron_eval(or_neurons[s], stream);
      row.activations.push_back(a);
      row.fired.push_back(a > 0.0);
      if (a > 0.0) written = written + outputs[s];
      if ((a > 0.0) != (per_set[s] > 0)) table.exact = false;
    }
    for (int c = 0; c < n; ++c) {
      const bool present = boolean_neuron_eval(recoverers[static_cast<std::size_t>(c)], written) > 0.0;
      row.recovered.push_back(present);
      if (present != input[static_cast<std::size_t>(c)]) table.exact = false;
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace vsalens::vsa
