#include "vsalens/safetensors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace vsalens::st {

namespace {

static_assert(std::endian::native == std::endian::little, "safetensors I/O assumes a little-endian host");

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F64: return 8;
    case DType::F32: return 4;
    case DType::F16:
    case DType::BF16: return 2;
  }
  return 0;
}

DType parse_dtype(const std::string& s) {
  if (s == "F64") return DType::F64;
  if (s == "F32") return DType::F32;
  if (s == "F16") return DType::F16;
  if (s == "BF16") return DType::BF16;
  throw CorruptCheckpointError("unsupported tensor dtype " + s);
}

float f16_to_f32(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1fu;
  std::uint32_t mant = h & 0x3ffu;
  std::uint32_t bits;
  if (exp == 0x1f) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      int e = -1;
      do {
        ++e;
        mant <<= 1;
      } while ((mant & 0x400u) == 0);
      bits = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | ((mant & 0x3ffu) << 13);
    }
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

}  // namespace

std::int64_t TensorInfo::numel() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

SafetensorsFile SafetensorsFile::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FilesystemError("cannot open checkpoint " + path.string());
  const auto file_size = std::filesystem::file_size(path);

  std::uint64_t header_len = 0;
  if (!in.read(reinterpret_cast<char*>(&header_len), 8) || header_len + 8 > file_size)
    throw CorruptCheckpointError("bad safetensors header length in " + path.string());

  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::parse_error& e) {
    throw CorruptCheckpointError(std::string("unparseable safetensors header: ") + e.what());
  }

  SafetensorsFile f;
  f.data_.resize(file_size - 8 - header_len);
  in.read(f.data_.data(), static_cast<std::streamsize>(f.data_.size()));
  if (!in) throw CorruptCheckpointError("truncated safetensors data in " + path.string());

  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "__metadata__") {
      for (auto m = it->begin(); m != it->end(); ++m)
        f.metadata_[m.key()] = m->is_string() ? m->get<std::string>() : m->dump();
      continue;
    }
    TensorInfo t;
    t.dtype = parse_dtype(it->at("dtype").get<std::string>());
    t.shape = it->at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = it->at("data_offsets").get<std::vector<std::size_t>>();
    if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > f.data_.size() ||
        offsets[1] - offsets[0] != static_cast<std::size_t>(t.numel()) * dtype_size(t.dtype))
      throw CorruptCheckpointError("bad data offsets for tensor " + it.key());
    t.begin = offsets[0];
    t.end = offsets[1];
    f.tensors_.emplace(it.key(), std::move(t));
  }
  return f;
}

std::vector<std::string> SafetensorsFile::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : tensors_) out.push_back(k);
  return out;
}

const TensorInfo& SafetensorsFile::info(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw MissingTensorError(name);
  return it->second;
}

std::vector<double> SafetensorsFile::values(const std::string& name) const {
  const TensorInfo& t = info(name);
  const auto n = static_cast<std::size_t>(t.numel());
  const char* p = data_.data() + t.begin;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (t.dtype) {
      case DType::F64: {
        double v;
        std::memcpy(&v, p + 8 * i, 8);
        out[i] = v;
        break;
      }
      case DType::F32: {
        float v;
        std::memcpy(&v, p + 4 * i, 4);
        out[i] = v;
        break;
      }
      case DType::F16: {
        std::uint16_t h;
        std::memcpy(&h, p + 2 * i, 2);
        out[i] = f16_to_f32(h);
        break;
      }
      case DType::BF16: {
        std::uint16_t h;
        std::memcpy(&h, p + 2 * i, 2);
        out[i] = std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
        break;
      }
    }
    if (!std::isfinite(out[i])) throw CorruptCheckpointError("non-finite value in tensor " + name);
  }
  return out;
}

Matrix SafetensorsFile::matrix(const std::string& name) const {
  const TensorInfo& t = info(name);
  if (t.shape.empty() || t.shape.size() > 2)
    throw ShapeError("tensor " + name + " has rank " + std::to_string(t.shape.size()) +
                     ", expected 1 or 2");
  const auto v = values(name);
  const Eigen::Index rows = t.shape.size() == 2 ? t.shape[0] : 1;
  const Eigen::Index cols = t.shape.back();
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

Vector SafetensorsFile::vector(const std::string& name) const {
  const TensorInfo& t = info(name);
  if (t.shape.size() != 1)
    throw ShapeError("tensor " + name + " has rank " + std::to_string(t.shape.size()) + ", expected 1");
  const auto v = values(name);
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void write_safetensors(const std::filesystem::path& path, const std::vector<OutTensor>& tensors,
                       const std::map<std::string, std::string>& metadata) {
  std::vector<const OutTensor*> order;
  for (const auto& t : tensors) order.push_back(&t);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->name < b->name; });

  nlohmann::json header = nlohmann::json::object();
  if (!metadata.empty()) header["__metadata__"] = metadata;
  std::size_t offset = 0;
  for (const auto* t : order) {
    const std::size_t bytes = t->values.size() * 4;
    header[t->name] = {{"dtype", "F32"}, {"shape", t->shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string h = header.dump();
  while (h.size() % 8 != 0) h.push_back(' ');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FilesystemError("cannot write " + path.string());
  const std::uint64_t len = h.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto* t : order)
    out.write(reinterpret_cast<const char*>(t->values.data()),
              static_cast<std::streamsize>(t->values.size() * 4));
  if (!out) throw FilesystemError("write failed for " + path.string());
}

OutTensor to_out_tensor(std::string name, const Matrix& m) {
  OutTensor t{std::move(name), {m.rows(), m.cols()}, {}};
  t.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.values.push_back(static_cast<float>(m(i, j)));
  return t;
}

OutTensor to_out_tensor(std::string name, const Vector& v) {
  OutTensor t{std::move(name), {v.size()}, {}};
  for (Eigen::Index i = 0; i < v.size(); ++i) t.values.push_back(static_cast<float>(v(i)));
  return t;
}

}  // namespace vsalens::st
