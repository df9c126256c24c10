#pragma once

// Minimal reader/writer for the safetensors single-file container:
// 8-byte little-endian header length, a JSON header, then raw tensor bytes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vsalens/common.hpp"

namespace vsalens::st {

enum class DType { F64, F32, F16, BF16 };

class CorruptCheckpointError : public Error {
 public:
  using Error::Error;
};

class MissingTensorError : public LookupError {
 public:
  explicit MissingTensorError(std::string name)
      : LookupError("named tensor missing: " + name), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

struct TensorInfo {
  DType dtype = DType::F32;
  std::vector<std::int64_t> shape;
  std::size_t begin = 0;
  std::size_t end = 0;

  std::int64_t numel() const;
};

class SafetensorsFile {
 public:
  static SafetensorsFile read(const std::filesystem::path& path);

  const std::map<std::string, std::string>& metadata() const { return metadata_; }
  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  std::vector<std::string> names() const;
  const TensorInfo& info(const std::string& name) const;

  // Converted to double. Throws CorruptCheckpointError on NaN/Inf.
  std::vector<double> values(const std::string& name) const;
  // 2-D tensor as stored (row-major); 1-D tensors become a single row.
  Matrix matrix(const std::string& name) const;
  Vector vector(const std::string& name) const;

 private:
  std::map<std::string, std::string> metadata_;
  std::map<std::string, TensorInfo> tensors_;
  std::vector<char> data_;
};

struct OutTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> values;
};

void write_safetensors(const std::filesystem::path& path, const std::vector<OutTensor>& tensors,
                       const std::map<std::string, std::string>& metadata);

OutTensor to_out_tensor(std::string name, const Matrix& m);
OutTensor to_out_tensor(std::string name, const Vector& v);

}  // namespace vsalens::st
