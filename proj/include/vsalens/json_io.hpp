#pragma once

// JSON encodings of results. Every top-level document carries schema_version.

#include <filesystem>

#include <nlohmann/json.hpp>

#include "vsalens/circuit.hpp"
#include "vsalens/diagnostics.hpp"
#include "vsalens/explainer.hpp"
#include "vsalens/vocab.hpp"

namespace vsalens {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

Json to_json(const ExplainerConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
ExplainerConfig explainer_config_from_json(const Json& j);

// `vocab` adds decoded token strings for TOKEN atoms.
Json to_json(const Explanation& e, const Vocabulary* vocab = nullptr, bool with_trace = true);
Explanation explanation_from_json(const Json& j);

Json to_json(const CoverageStats& c);
Json to_json(const GramReport& r);
Json to_json(const BiasReport& r);
Json to_json(const CircuitGraph& g, const Vocabulary* vocab = nullptr);

// Pretty-printed, trailing newline. Throws FilesystemError.
void write_json(const std::filesystem::path& path, const Json& j);
Json read_json(const std::filesystem::path& path);

}  // namespace vsalens
