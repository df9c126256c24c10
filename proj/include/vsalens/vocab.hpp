#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vsalens/common.hpp"

namespace vsalens {

class VocabMissingError : public FilesystemError {
 public:
  using FilesystemError::FilesystemError;
};

// Token id -> display string, decoded from the byte-level BPE vocabulary JSON
// (string -> id). "Ġsaid" is displayed as " said".
class Vocabulary {
 public:
  static Vocabulary load(const std::filesystem::path& path);
  static Vocabulary from_map(const std::unordered_map<std::string, int>& encoded);

  std::size_t size() const { return display_.size(); }
  // Throws LookupError for ids outside the vocabulary.
  const std::string& decode(int id) const;
  std::optional<int> id_of(const std::string& display) const;

 private:
  std::vector<std::string> display_;
  std::unordered_map<std::string, int> by_display_;
};

// Inverse of GPT-2's bytes_to_unicode table applied to one encoded token.
std::string decode_byte_level(const std::string& encoded);

}  // namespace vsalens
