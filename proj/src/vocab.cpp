#include "vsalens/vocab.hpp"

#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

namespace vsalens {

namespace {

// Code point -> byte. Printable Latin-1 bytes map to themselves; the rest are
// shifted to 256 + n in byte order.
const std::map<char32_t, unsigned char>& unicode_to_byte() {
  static const auto table = [] {
    std::map<char32_t, unsigned char> m;
    auto printable = [](int b) {
      return (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE && b <= 0xFF);
    };
    int n = 0;
    for (int b = 0; b < 256; ++b) {
      if (printable(b))
        m[static_cast<char32_t>(b)] = static_cast<unsigned char>(b);
      else
        m[static_cast<char32_t>(256 + n++)] = static_cast<unsigned char>(b);
    }
    return m;
  }();
  return table;
}

std::vector<char32_t> utf8_code_points(const std::string& s) {
  std::vector<char32_t> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    int len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xe ? 3 : (c >> 3) == 0x1e ? 4 : 0;
    if (len == 0 || i + static_cast<std::size_t>(len) > s.size())
      throw ArgumentError("invalid UTF-8 in vocabulary entry");
    char32_t cp = len == 1 ? c : len == 2 ? (c & 0x1f) : len == 3 ? (c & 0x0f) : (c & 0x07);
    for (int k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]) & 0x3f);
    out.push_back(cp);
    i += static_cast<std::size_t>(len);
  }
  return out;
}

}  // namespace

std::string decode_byte_level(const std::string& encoded) {
  const auto& table = unicode_to_byte();
  std::string out;
  for (char32_t cp : utf8_code_points(encoded)) {
    auto it = table.find(cp);
    if (it == table.end()) throw ArgumentError("code point outside the byte-level alphabet");
    out.push_back(static_cast<char>(it->second));
  }
  return out;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw VocabMissingError("vocabulary not found: " + path.string());
  const auto j = nlohmann::json::parse(in);
  std::unordered_map<std::string, int> m;
  for (auto it = j.begin(); it != j.end(); ++it) m[it.key()] = it->get<int>();
  return from_map(m);
}

Vocabulary Vocabulary::from_map(const std::unordered_map<std::string, int>& encoded) {
  Vocabulary v;
  int max_id = -1;
  for (const auto& [_, id] : encoded) max_id = std::max(max_id, id);
  v.display_.assign(static_cast<std::size_t>(max_id + 1), std::string());
  std::vector<bool> seen(v.display_.size(), false);
  for (const auto& [tok, id] : encoded) {
    if (id < 0) throw ArgumentError("negative token id in vocabulary");
    v.display_[static_cast<std::size_t>(id)] = decode_byte_level(tok);
    seen[static_cast<std::size_t>(id)] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw ArgumentError("vocabulary ids are not contiguous; id " + std::to_string(i) + " missing");
  for (std::size_t i = 0; i < v.display_.size(); ++i) v.by_display_.emplace(v.display_[i], static_cast<int>(i));
  return v;
}

const std::string& Vocabulary::decode(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= display_.size())
    throw LookupError("token id " + std::to_string(id) + " not in vocabulary");
  return display_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocabulary::id_of(const std::string& display) const {
  auto it = by_display_.find(display);
  if (it == by_display_.end()) return std::nullopt;
  return it->second;
}

}  // namespace vsalens
