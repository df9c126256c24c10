#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace vsalens {

// Row-major so that row i of a weight matrix is one contiguous residual-space vector.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class InvalidDimensionError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class FilesystemError : public Error {
 public:
  using Error::Error;
};

// Subtracts the coordinate mean, i.e. projects off the all-ones direction.
inline Vector centered(const Vector& v) {
  if (v.size() == 0) return v;
  return v.array() - v.mean();
}

// Cosine with the convention that a zero vector has cosine 0 with everything.
inline double cosine(const Vector& a, const Vector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace vsalens
