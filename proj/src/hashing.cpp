#include "vsalens/hashing.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include <openssl/evp.h>

#include "vsalens/weights.hpp"

namespace vsalens {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr); }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }

  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md.data(), &len);
    std::string out;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
      std::snprintf(buf, sizeof buf, "%02x", md[i]);
      out += buf;
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FilesystemError("cannot read " + path.string());
  Sha256 h;
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::string content_hash(const Matrix& vectors, const std::vector<AtomLabel>& labels) {
  Sha256 h;
  const std::int64_t dims[2] = {vectors.rows(), vectors.cols()};
  h.update(dims, sizeof dims);
  h.update(vectors.data(), static_cast<std::size_t>(vectors.size()) * sizeof(double));
  for (const auto& l : labels) {
    const int fields[4] = {static_cast<int>(l.kind), l.layer, l.head, l.index};
    h.update(fields, sizeof fields);
  }
  return h.hex();
}

std::string content_hash(const AtomTable& atoms) { return content_hash(atoms.vectors(), atoms.labels()); }

}  // namespace vsalens
