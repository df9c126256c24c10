#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const std::string kBin = VSALENS_BIN;
const std::string kTiny = VSALENS_FIXTURES "/tiny_gpt2.safetensors";
const std::string kVocab = VSALENS_FIXTURES "/tiny_vocab.json";

fs::path work_dir() {
  const auto dir = fs::temp_directory_path() / "vsalens_test_cli";
  fs::create_directories(dir);
  return dir;
}

// Runs the binary with the given arguments; stderr goes to work_dir()/stderr.txt.
int run(const std::string& args, const std::string& env = "VSALENS_CHECKPOINT= VSALENS_VOCAB= ") {
  const std::string cmd = "env " + env + "'" + kBin + "' " + args + " >'" + (work_dir() / "stdout.txt").string() +
                          "' 2>'" + (work_dir() / "stderr.txt").string() + "'";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string model_args() { return "--checkpoint '" + kTiny + "' --vocab '" + kVocab + "' "; }

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("explain --checkpoint x") == 2);
  CHECK(run("vsa-demo --dim 1") == 2);
  CHECK(run("--threads 0 vsa-demo") == 2);
}

TEST_CASE("missing checkpoint exits 3 with a hint") {
  const auto out = work_dir() / "nock";
  CHECK(run("--out '" + out.string() + "' explain --layer 0") == 3);
  CHECK(slurp(work_dir() / "stderr.txt").find("export_gpt2.py") != std::string::npos);
  CHECK(run("--checkpoint /nonexistent.safetensors diagnose --target embeddings") == 3);
}

TEST_CASE("vsa-demo prints JSON") {
  REQUIRE(run("vsa-demo --dim 256") == 0);
  const auto j = nlohmann::json::parse(slurp(work_dir() / "stdout.txt"));
  CHECK(j.is_object());
}

TEST_CASE("selftest --quick passes") {
  const auto out = work_dir() / "selftest";
  CHECK(run("--out '" + out.string() + "' selftest --quick") == 0);
  CHECK(fs::exists(out / "selftest.json"));
  CHECK(fs::exists(out / "manifest-selftest.json"));
  CHECK(slurp(work_dir() / "stderr.txt").find("PASS planted_recovery") != std::string::npos);
}

TEST_CASE("explain, circuits, ablate and diagnose on the tiny model") {
  const auto root = work_dir() / "tiny";
  fs::remove_all(root);
  const auto a = root / "a";
  const auto b = root / "b";

  REQUIRE(run(model_args() + "--out '" + a.string() + "' explain --layer 0 1 --atoms token,attn,mlp") == 0);
  REQUIRE(run(model_args() + "--threads 2 --out '" + b.string() + "' explain --layer 0 1 --atoms token,attn,mlp") ==
          0);
  for (const char* f : {"explainer_config.json", "explanations_layer_0.jsonl", "explanations_layer_1.jsonl",
                        "layer_0.csv", "coverage_layer_1.json", "manifest-explain.json"})
    CHECK(fs::exists(a / f));
  CHECK(slurp(a / "explanations_layer_1.jsonl") == slurp(b / "explanations_layer_1.jsonl"));
  CHECK(slurp(a / "explanations_layer_0.jsonl") == slurp(b / "explanations_layer_0.jsonl"));

  std::ifstream lines(a / "explanations_layer_1.jsonl");
  int count = 0;
  for (std::string line; std::getline(lines, line);) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["layer"] == 1);
    CHECK(j["neuron"] == count);
    ++count;
  }
  CHECK(count == 64);

  const auto manifest = nlohmann::json::parse(slurp(a / "manifest-explain.json"));
  CHECK(manifest["hashes"]["checkpoint_sha256"].get<std::string>().size() == 64);
  CHECK(manifest.contains("created_at"));
  CHECK(manifest.contains("run_config"));

  REQUIRE(run(model_args() + "--out '" + a.string() + "' explain --layer 1 --neuron 5 --atoms token,attn,mlp") == 0);
  CHECK(fs::exists(a / "explanation_1_5.json"));

  const auto dot = root / "graph" / "g.dot";
  REQUIRE(run(model_args() + "circuits --explanations '" + a.string() + "' --unembed --unembed-top 2 --dot '" +
              dot.string() + "'") == 0);
  CHECK(slurp(dot).rfind("digraph", 0) == 0);
  CHECK(fs::exists(root / "graph" / "g.json"));
  CHECK(fs::exists(root / "graph" / "manifest-circuits.json"));

  const auto traced = root / "graph" / "t.dot";
  CHECK(run("circuits --explanations '" + a.string() + "' --trace mlp:1.5 --depth 1 --dot '" + traced.string() +
            "'") == 0);
  CHECK(run("circuits --explanations '" + a.string() + "' --trace bogus --dot '" + traced.string() + "'") == 2);
  CHECK(run("circuits --explanations '" + (root / "nowhere").string() + "'") == 2);

  const auto ids = root / "ids.txt";
  std::ofstream(ids) << "1 2 3\n4 5\n";
  const auto ab = root / "ablate";
  REQUIRE(run(model_args() + "--out '" + ab.string() + "' ablate --layer 1 --neuron 5 --prompt-ids '" +
              ids.string() + "' --target-id 3") == 0);
  const auto abl = nlohmann::json::parse(slurp(ab / "ablation.json"));
  CHECK(abl["results"].size() == 2);
  CHECK(fs::exists(ab / "manifest-ablate.json"));
  CHECK(run(model_args() + "--out '" + ab.string() + "' ablate --layer 7 --neuron 5 --prompt-ids '" + ids.string() +
            "' --target-id 3") == 2);

  const auto dg = root / "diag";
  REQUIRE(run(model_args() + "--out '" + dg.string() + "' diagnose --target embeddings --target all-mlp --target " +
              "biases --target means --heatmap --prompt-ids '" + ids.string() + "'") == 0);
  const auto diag = nlohmann::json::parse(slurp(dg / "diagnose.json"));
  CHECK(diag.contains("schema_version"));
  CHECK(fs::exists(dg / "manifest-diagnose.json"));
  CHECK(run(model_args() + "--out '" + dg.string() + "' diagnose --target nonsense") == 2);
}

TEST_CASE("environment supplies the checkpoint") {
  const auto out = work_dir() / "env";
  CHECK(run("--out '" + out.string() + "' explain --layer 0",
            "VSALENS_CHECKPOINT='" + kTiny + "' VSALENS_VOCAB='" + kVocab + "' ") == 0);
  CHECK(fs::exists(out / "explanations_layer_0.jsonl"));
}
