#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "vsalens/safetensors.hpp"

using namespace vsalens;
using namespace vsalens::st;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "vsalens_test_safetensors";
  fs::create_directories(dir);
  return dir / name;
}

// Writes header JSON + payload with the 8-byte little-endian length prefix.
fs::path raw_file(const std::string& name, const std::string& header, const std::string& payload) {
  const auto p = temp_path(name);
  std::ofstream out(p, std::ios::binary);
  std::uint64_t n = header.size();
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((n >> (8 * i)) & 0xff));
  out << header << payload;
  return p;
}

std::string le16(std::initializer_list<std::uint16_t> vs) {
  std::string s;
  for (auto v : vs) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>(v >> 8));
  }
  return s;
}

}  // namespace

TEST_CASE("write then read round-trips F32 tensors and metadata") {
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  Vector v(2);
  v << -0.5, 0.25;
  const auto p = temp_path("roundtrip.safetensors");
  write_safetensors(p, {to_out_tensor("zeta", m), to_out_tensor("alpha", v)}, {{"n_head", "2"}});

  const auto f = SafetensorsFile::read(p);
  CHECK(f.metadata().at("n_head") == "2");
  CHECK(f.names() == std::vector<std::string>{"alpha", "zeta"});
  CHECK(f.matrix("zeta") == m);
  CHECK(f.vector("alpha") == v);
  CHECK(f.info("zeta").shape == std::vector<std::int64_t>{2, 3});
  CHECK(f.info("zeta").dtype == DType::F32);
  CHECK(f.has("alpha"));
  CHECK_FALSE(f.has("beta"));

  // Header padded so the data section is 8-byte aligned.
  std::ifstream in(p, std::ios::binary);
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), 8);
  CHECK(n % 8 == 0);
}

TEST_CASE("missing tensor is reported by name") {
  const auto p = temp_path("one.safetensors");
  write_safetensors(p, {to_out_tensor("a", Vector(Vector::Ones(2)))}, {});
  const auto f = SafetensorsFile::read(p);
  try {
    f.values("h.3.mlp.c_proj.weight");
    FAIL("expected MissingTensorError");
  } catch (const MissingTensorError& e) {
    CHECK(e.name() == "h.3.mlp.c_proj.weight");
  }
  CHECK_THROWS_AS(f.vector("h.3.mlp.c_proj.weight"), LookupError);
}

TEST_CASE("rank mismatches are shape errors") {
  const auto p = temp_path("rank.safetensors");
  write_safetensors(p, {to_out_tensor("m", Matrix(Matrix::Ones(2, 2)))}, {});
  CHECK_THROWS_AS(SafetensorsFile::read(p).vector("m"), ShapeError);
}

TEST_CASE("half precision and f64 decoding") {
  // 1.0, -2.0, smallest subnormal, 65504
  const auto f16 = raw_file("f16.safetensors", R"({"x":{"dtype":"F16","shape":[4],"data_offsets":[0,8]}})",
                            le16({0x3C00, 0xC000, 0x0001, 0x7BFF}));
  const auto x = SafetensorsFile::read(f16).values("x");
  CHECK(x[0] == 1.0);
  CHECK(x[1] == -2.0);
  CHECK(x[2] == doctest::Approx(std::ldexp(1.0, -24)));
  CHECK(x[3] == 65504.0);

  const auto bf16 = raw_file("bf16.safetensors", R"({"y":{"dtype":"BF16","shape":[2],"data_offsets":[0,4]}})",
                             le16({0x3F80, 0xC000}));
  const auto y = SafetensorsFile::read(bf16).values("y");
  CHECK(y[0] == 1.0);
  CHECK(y[1] == -2.0);

  double d = 0.1;
  std::string bytes(8, '\0');
  std::memcpy(bytes.data(), &d, 8);
  const auto f64 = raw_file("f64.safetensors", R"({"z":{"dtype":"F64","shape":[1],"data_offsets":[0,8]}})", bytes);
  CHECK(SafetensorsFile::read(f64).values("z")[0] == 0.1);
}

TEST_CASE("corrupt files") {
  CHECK_THROWS_AS(SafetensorsFile::read(temp_path("does_not_exist.safetensors")), FilesystemError);

  const auto bad_json = raw_file("bad_json.safetensors", "{not json", "");
  CHECK_THROWS_AS(SafetensorsFile::read(bad_json), CorruptCheckpointError);

  const auto overrun = raw_file("overrun.safetensors", R"({"x":{"dtype":"F32","shape":[4],"data_offsets":[0,16]}})",
                                std::string(8, '\0'));
  CHECK_THROWS_AS(SafetensorsFile::read(overrun), CorruptCheckpointError);

  const auto wrong_size = raw_file("wrong_size.safetensors",
                                   R"({"x":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}})", std::string(8, '\0'));
  CHECK_THROWS_AS(SafetensorsFile::read(wrong_size), CorruptCheckpointError);

  const auto dtype = raw_file("dtype.safetensors", R"({"x":{"dtype":"I8","shape":[1],"data_offsets":[0,1]}})",
                              std::string(1, '\0'));
  CHECK_THROWS_AS(SafetensorsFile::read(dtype), CorruptCheckpointError);

  const float nan = std::nanf("");
  std::string bytes(4, '\0');
  std::memcpy(bytes.data(), &nan, 4);
  const auto nonfinite =
      raw_file("nan.safetensors", R"({"x":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})", bytes);
  CHECK_THROWS_AS(SafetensorsFile::read(nonfinite).values("x"), CorruptCheckpointError);

  const auto p = temp_path("short.safetensors");
  std::ofstream(p, std::ios::binary) << "abc";
  CHECK_THROWS_AS(SafetensorsFile::read(p), CorruptCheckpointError);
}

TEST_CASE("f16 fixture decodes close to the f32 fixture") {
  const auto a = SafetensorsFile::read(VSALENS_FIXTURES "/tiny_gpt2.safetensors");
  const auto b = SafetensorsFile::read(VSALENS_FIXTURES "/tiny_gpt2_f16.safetensors");
  CHECK(b.info("wte.weight").dtype == DType::F16);
  const Matrix ma = a.matrix("wte.weight");
  const Matrix mb = b.matrix("wte.weight");
  CHECK(((ma - mb).array().abs() <= ma.array().abs() * 1e-3 + 1e-4).all());
}
