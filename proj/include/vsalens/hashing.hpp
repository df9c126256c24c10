#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vsalens/common.hpp"

namespace vsalens {

class AtomTable;
struct AtomLabel;

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);
// Hash of the vectors' bytes and labels; keys the on-disk index cache.
std::string content_hash(const Matrix& vectors, const std::vector<AtomLabel>& labels);
std::string content_hash(const AtomTable& atoms);

}  // namespace vsalens
