#pragma once

// Run configuration, dataset generation, training/sweep orchestration,
// offline evaluation, plot-data export and file validation.
//
// Every command returns a JSON summary; errors are thrown as alchemy::Error.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "alchemy/model.hpp"
#include "alchemy/optim.hpp"
#include "alchemy/task_sampler.hpp"

namespace alchemy {

inline constexpr std::string_view kVersion = "0.1.0";

struct DatasetConfig {
  int pool_size = 1000;
  double split_ratio = 0.9;
  int episodes_per_chemistry = 8;
  SupportMode support_mode = SupportMode::kNoBacktrack;
  int max_support = kDefaultMaxSupport;
  std::uint64_t seed = 0;
};

struct RunConfig {
  TaskKind task_kind = TaskKind::kWithheldPair;
  std::vector<int> ks{1};
  DatasetConfig dataset;
  ModelConfig model;
  OptimizerConfig optimizer;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string output_dir = "runs/default";
  std::string dataset_dir;  // empty: <output_dir>/dataset
  int log_every = 1;        // epochs between metric rows
  int checkpoint_every = 50;
  bool eval_train = false;
  int max_batch_tokens = 8192;
  std::optional<long> max_steps;

  /// Strict parse; errors carry the offending field path. Fills
  /// model.max_seq_len from the task kind when absent.
  static RunConfig from_json(const nlohmann::json& j);
  /// All fields, defaults included.
  nlohmann::ordered_json to_json() const;
  void validate() const;
};

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view data);
/// SHA-256 of the key-sorted compact dump; stable under field reordering.
std::string json_hash(const nlohmann::json& j);

/// Hash of everything that affects results (locations excluded).
std::string config_hash(const RunConfig& cfg);
/// Hash of the fields that determine the generated dataset.
std::string dataset_hash(const RunConfig& cfg);

/// Throws Error(kInvalidConfig) naming the first optimiser value that is not
/// in the documented sweep grid.
void check_sweep_grid(const RunConfig& cfg);

/// Relative paths resolve against $ALCHEMY_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output(const std::string& path);

/// Reads a JSON config file. Throws kIo / kInvalidConfig.
nlohmann::json read_config_file(const std::filesystem::path& path);
/// Applies "a.b.c" -> value overrides to a config object.
void apply_override(nlohmann::json& config, const std::string& dotted, const nlohmann::json& value);

struct TrainOptions {
  bool fresh = false;    // ignore existing checkpoints and logs
  bool verbose = false;  // per-epoch progress on stderr
};

nlohmann::ordered_json cmd_generate(const RunConfig& cfg);
nlohmann::ordered_json cmd_train(const RunConfig& cfg, const TrainOptions& options = {});
/// `grid_config` is a run config plus "grid" ({"a.b": [values]}) and/or
/// "points" ([{"a.b": value}]) and optional "allow_off_grid".
nlohmann::ordered_json cmd_sweep(const nlohmann::json& grid_config, const TrainOptions& options = {});

struct EvaluateRequest {
  std::filesystem::path episodes;
  std::filesystem::path chemistries;
  std::filesystem::path predictions;  // JSONL {"episode_id", "predicted"}
  std::optional<std::string> chance;  // chance predictor instead of a file
};
nlohmann::ordered_json cmd_evaluate(const EvaluateRequest& request);

struct ExportRequest {
  std::vector<std::filesystem::path> runs;
  std::filesystem::path out_dir;
  std::string split = "val";
  std::optional<std::vector<std::string>> metrics;  // default: per task kind
};
nlohmann::ordered_json cmd_export_plots(const ExportRequest& request);

/// Chemistry or episode JSONL, or a dataset directory. Episodes are checked
/// against `chemistries` when given (or the sibling chemistries.jsonl).
nlohmann::ordered_json cmd_validate(const std::filesystem::path& path,
                                    const std::optional<std::filesystem::path>& chemistries = {});

/// Chance levels drawn as guide lines for a series.
nlohmann::ordered_json chance_guides(TaskKind kind, int k);

}  // namespace alchemy
