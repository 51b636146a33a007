#pragma once

// Run configuration files (JSON). Every section is an object; unknown keys
// are rejected and validation reports every problem with its key path.
//
//   {
//     "schema_version": 1,
//     "seed": 7,
//     "models":  { "source": "toy", "toy": { ...benchmark parameters... } }
//             or { "source": "files", "generator": "g.json", "target": "t.json",
//                  "eval": "e.json", "face": "f.json", "critic": "c.json",
//                  "training_images": "train.features" },
//     "attack":  { "sample_count": 2000, ..., "optimization_transforms": [...],
//                  "selection_transforms": [...] },
//     "metrics": { "knn_k": 3, "fid_correct_only": false },
//     "output":  { "directory": "runs/toy", "images": true, "grids": true }
//   }
//
// Only "seed" is required. Transform lists default to the toy benchmark
// pipelines for the toy source and are required for the files source.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppa/attack.hpp"
#include "ppa/harness/toy_benchmark.hpp"

namespace ppa::harness {

inline constexpr int kSchemaVersion = 1;

struct ConfigIssue {
  std::string path;  // e.g. "attack.learning_rate"
  std::string message;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<ConfigIssue> issues);
  const std::vector<ConfigIssue>& issues() const { return issues_; }

 private:
  std::vector<ConfigIssue> issues_;
};

enum class ModelSource { toy, files };

struct ModelFiles {
  std::filesystem::path generator;
  std::filesystem::path target;
  std::filesystem::path eval;
  std::filesystem::path face;
  std::filesystem::path critic;           // optional
  std::filesystem::path training_images;  // labeled feature file of flattened images
};

struct MetricsOptions {
  std::size_t knn_k = 3;
  bool fid_correct_only = false;
};

struct OutputOptions {
  std::filesystem::path directory = "ppa_run";
  bool images = true;
  bool grids = true;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 0;
  ModelSource source = ModelSource::toy;
  ToyBenchmarkParams toy;
  ModelFiles files;
  /// Empty target_classes means every class of the target model.
  attack::AttackConfig attack;
  MetricsOptions metrics;
  OutputOptions output;
};

/// Parses and validates; throws ConfigError listing every issue. Relative
/// model paths resolve against `base_dir`.
RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Fully resolved document; parse_config(to_json(c)) reproduces c.
nlohmann::json to_json(const RunConfig& config);
void save_config(const std::filesystem::path& path, const RunConfig& config);

/// SHA-256 of the canonical dump of every semantic field (the output section
/// is excluded). Insensitive to formatting and key order.
std::string config_hash(const RunConfig& config);

bool operator==(const RunConfig& a, const RunConfig& b);

nlohmann::json transforms_to_json(const transforms::TransformPipeline& pipeline);
transforms::TransformPipeline transforms_from_json(const nlohmann::json& j);

}  // namespace ppa::harness
