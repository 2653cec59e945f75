#pragma once
// Declarative experiment runs: fit a density model, generate queries (or
// patches), embed every split, and score the embeddings.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "tpm/cltree.hpp"
#include "tpm/dataset.hpp"
#include "tpm/embed.hpp"
#include "tpm/eval.hpp"
#include "tpm/learnspn.hpp"

namespace tpm {

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct DatasetConfig {
  std::string name = "dataset";
  DatasetFormat format = DatasetFormat::kCsvLabeled;
  std::size_t width = 0;
  std::size_t height = 0;
  // Either three split files ...
  std::string train, valid, test;
  // ... or one file split with a seed.
  std::string path;
  std::array<double, 3> split{0.7, 0.15, 0.15};
  std::uint64_t split_seed = 0;

  bool presplit() const { return path.empty(); }
  bool operator==(const DatasetConfig&) const = default;
};

struct SpnModelConfig {
  std::size_t m = 500;
  double rho = 20.0;
  double alpha = 0.1;
  std::size_t cluster_max_iters = 100;
  std::size_t cluster_restarts = 3;
  std::uint64_t seed = 1;
  bool operator==(const SpnModelConfig&) const = default;
};

struct MtModelConfig {
  std::size_t components = 3;
  std::size_t iters = 100;
  double tol = 1e-4;
  double alpha = 0.1;
  std::uint64_t seed = 1;
  bool operator==(const MtModelConfig&) const = default;
};

enum class EmbeddingMode { kQuery, kPatch };

struct EmbeddingConfig {
  EmbeddingMode mode = EmbeddingMode::kQuery;
  std::size_t k = 1000;
  std::size_t min_side = 2;
  std::size_t max_side = 7;
  std::size_t s = 10000;
  std::size_t d = 16;
  std::size_t stride = 1;
  FeatureScale scale = FeatureScale::kLog;
  std::uint64_t seed = 1;
  bool operator==(const EmbeddingConfig&) const = default;
};

struct EvalConfig {
  std::vector<double> c_grid = kDefaultCGrid;
  std::size_t step = 100;
  std::size_t max_iters = 1000;
  double grad_tol = 1e-5;
  bool operator==(const EvalConfig&) const = default;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  std::variant<SpnModelConfig, MtModelConfig> model;
  EmbeddingConfig embedding;
  EvalConfig eval;
  std::string output_dir = "out";
  bool operator==(const ExperimentConfig&) const = default;
};

// Unknown keys, missing required keys, and wrong types throw ConfigError.
ExperimentConfig parse_experiment_config(std::string_view json_text);
// As above; relative dataset and output paths resolve against the file's
// directory.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
// Canonical JSON (every field explicit, fixed key order).
std::string serialize_experiment_config(const ExperimentConfig& cfg);
// FNV-1a 64 over the canonical JSON, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);
// Replaces every seed in the config.
void override_seeds(ExperimentConfig& cfg, std::uint64_t seed);
// Semantic checks beyond parsing (geometry, side bounds, grid, ...).
void validate_experiment_config(const ExperimentConfig& cfg);

inline const std::vector<std::string> kStages{"fit", "genqueries", "embed", "eval"};

struct RunOptions {
  std::size_t workers = 1;
  std::optional<std::string> stage;  // run a single stage against existing artifacts
  std::optional<std::filesystem::path> out_dir;  // overrides cfg.output_dir
};

struct RunArtifacts {
  std::filesystem::path out_dir;
  std::vector<std::filesystem::path> files;  // written by this run
  std::optional<CurveResult> curve;
};

// File names inside the output directory.
namespace artifact {
inline constexpr const char* kModel = "model.txt";
inline constexpr const char* kFitLog = "fit.log";
inline constexpr const char* kQueries = "queries.txt";
inline constexpr const char* kPatches = "patches.csv";
inline constexpr const char* kCurve = "curve.csv";
inline constexpr const char* kMetadata = "metadata.json";
std::string embedding(std::string_view split);  // embed.<split>.csv
}  // namespace artifact

// Reads an SPN or mixture model file (detected by the `MT` header).
std::unique_ptr<MarginalEvaluator> load_model(const std::filesystem::path& path);

// Throws StageError (after removing the run's partial artifacts and recording
// the failure in metadata.json).
RunArtifacts run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});

}  // namespace tpm
