#pragma once

// Bundling, binding and boolean-gate neurons over nearly orthogonal vectors.
//
// Everything here is checkpoint-free: concept vectors are sampled isotropically
// and the properties (membership by dot product, cosine preservation under
// binding, boolean gates realised by a ReLU with a bias) are verified directly.

#include <cstdint>
#include <span>
#include <vector>

#include "vsalens/common.hpp"

namespace vsalens::vsa {

class ConceptVector {
 public:
  ConceptVector() = default;
  // Throws ArgumentError on non-finite entries or an empty vector.
  explicit ConceptVector(Vector values);

  static ConceptVector zeros(Eigen::Index dim);

  Eigen::Index dim() const { return values_.size(); }
  const Vector& values() const { return values_; }
  double norm() const { return values_.norm(); }

  ConceptVector operator+(const ConceptVector& other) const;
  ConceptVector operator-(const ConceptVector& other) const;
  ConceptVector operator*(double scale) const;

 private:
  Vector values_;
};

double dot(const ConceptVector& a, const ConceptVector& b);
double cosine(const ConceptVector& a, const ConceptVector& b);

// i.i.d. standard Gaussians, normalised to unit length.
std::vector<ConceptVector> sample_concept_vectors(int count, int dim, std::uint64_t seed);

// Σ signs[i] * atoms[i]; signs must be +1 or -1.
ConceptVector bundle(std::span<const ConceptVector> atoms, std::span<const int> signs);

class MembershipThreshold {
 public:
  explicit MembershipThreshold(double lambda);
  double lambda() const { return lambda_; }

 private:
  double lambda_;
};

bool contains(const ConceptVector& bundle, const ConceptVector& probe, MembershipThreshold threshold);

class BindingMatrix {
 public:
  // Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
  static BindingMatrix random(int dim, std::uint64_t seed);
  // Rows drawn independently on the unit sphere; only approximately orthogonal
  // and noticeably worse conditioned than random().
  static BindingMatrix random_unit_rows(int dim, std::uint64_t seed);
  static BindingMatrix identity(int dim);

  const Matrix& rows() const { return rows_; }
  std::uint64_t seed() const { return seed_; }
  Eigen::Index dim() const { return rows_.rows(); }

  // Largest |off-diagonal| entry of MᵀM.
  double max_offdiag_gram() const;
  // Unit rows and max_offdiag_gram() below `bound`.
  bool is_nearly_orthogonal(double bound = 0.2) const;

 private:
  BindingMatrix(Matrix rows, std::uint64_t seed) : rows_(std::move(rows)), seed_(seed) {}
  Matrix rows_;
  std::uint64_t seed_ = 0;
};

ConceptVector bind(const BindingMatrix& m, const ConceptVector& v);
ConceptVector unbind(const BindingMatrix& m, const ConceptVector& v);

enum class Gate { And, Or, NotAugmented };

struct BooleanNeuron {
  ConceptVector weights;
  double bias = 0.0;
  Gate gate = Gate::Or;

  // Bias -(k - 0.5): all k unit atoms must be present.
  static BooleanNeuron make_and(std::span<const ConceptVector> atoms);
  // Bias -0.5: any one unit atom suffices.
  static BooleanNeuron make_or(std::span<const ConceptVector> atoms);
  // AND over `present`, and none of `absent` (subtracted from the weights).
  static BooleanNeuron make_not(std::span<const ConceptVector> present,
                                std::span<const ConceptVector> absent);
};

// max(0, <weights, input> + bias)
double boolean_neuron_eval(const BooleanNeuron& neuron, const ConceptVector& input);

class DemoAssumptionViolated : public Error {
 public:
  using Error::Error;
};

struct SuperpositionRow {
  std::vector<bool> input;            // presence per concept
  std::vector<bool> fired;            // per OR-neuron
  std::vector<double> activations;    // per OR-neuron
  std::vector<bool> recovered;        // per concept, from the downstream AND check
};

struct SuperpositionTable {
  std::vector<SuperpositionRow> rows;
  // Every row fired exactly the expected OR-neurons and recovered its input.
  bool exact = true;
};

// One OR-neuron per set; each writes a fresh nearly orthogonal output vector
// into the stream. Concept c is then recovered downstream by an AND neuron over
// (output vector of c's set) and c itself. `or_sets` must partition the concept
// indices, and no input may contain two concepts of the same set.
SuperpositionTable or_set_superposition_demo(std::span<const ConceptVector> concepts,
                                             const std::vector<std::vector<int>>& or_sets,
                                             const std::vector<std::vector<bool>>& inputs,
                                             std::uint64_t seed = 0);

}  // namespace vsalens::vsa
