#pragma once

// Training/evaluation loop: seeded per-epoch shuffling, micro-batched
// gradient accumulation, per-epoch metric rows and binary checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "alchemy/chemistry.hpp"
#include "alchemy/metrics.hpp"
#include "alchemy/model.hpp"
#include "alchemy/optim.hpp"
#include "alchemy/task_sampler.hpp"
#include "alchemy/token_codec.hpp"

namespace alchemy {

/// An episode together with its id, chemistry and encoding.
struct LabeledEpisode {
  std::string id;
  const Chemistry* chemistry = nullptr;
  Episode episode;
  EncodedEpisode encoded;
};

std::vector<LabeledEpisode> label_episodes(const std::vector<EpisodeRecord>& records,
                                           const std::vector<Chemistry>& chemistries, int max_seq_len);

struct Prediction {
  std::string episode_id;
  int predicted = 0;
  int target = 0;
};

struct EvalResult {
  std::vector<Prediction> predictions;
  double mean_loss = 0.0;
  bool finite = true;
};

/// Dropout disabled; batches bounded by `max_batch_tokens` content tokens.
EvalResult evaluate_episodes(const Transformer& model, const std::vector<LabeledEpisode>& episodes,
                             int max_batch_tokens = 8192);

std::vector<EventRecord> classify_predictions(const std::vector<LabeledEpisode>& episodes,
                                              const std::vector<Prediction>& predictions);

struct TrainerOptions {
  ModelConfig model;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  int max_batch_tokens = 8192;  // micro-batch bound, in content tokens
  int checkpoint_every = 0;     // epochs; 0 keeps only the final checkpoint
  int eval_every = 1;           // metric rows every n epochs (and the last)
  bool eval_train = false;      // train rows from a clean evaluation pass
  std::optional<long> max_steps;  // stop early after this many optimiser steps
  std::filesystem::path checkpoint_path;  // empty disables checkpoints
  std::string run_id;
  std::string config_hash;
  TaskKind task_kind = TaskKind::kWithheldPair;
  int k = 1;
};

struct TrainResult {
  bool failed = false;
  std::string failure_reason;
  int last_epoch = 0;
  long steps = 0;
};

/// Receives each metric row as it is produced.
using RowSink = std::function<void(const nlohmann::ordered_json&)>;
/// Called after every checkpoint write with the epoch it holds.
using CheckpointHook = std::function<void(int epoch)>;

class Trainer {
 public:
  Trainer(TrainerOptions options, const std::vector<LabeledEpisode>* train, const std::vector<LabeledEpisode>* val);

  Transformer& model() { return model_; }
  const Transformer& model() const { return model_; }
  AdamW& optimizer() { return adam_; }
  int epoch() const { return epoch_; }

  /// Loads parameters, optimiser state and epoch. Throws Error(kParse) on a
  /// malformed file and Error(kInvalidConfig) on a config-hash mismatch.
  void load_checkpoint(const std::filesystem::path& path);
  void save_checkpoint(const std::filesystem::path& path) const;

  /// Runs epochs (epoch()+1 .. epochs). When starting from epoch 0, first
  /// emits the untrained evaluation rows for epoch 0.
  TrainResult run(const RowSink& sink, const CheckpointHook& on_checkpoint = {});

  /// One pass over the training set. Returns the mean training loss, or
  /// nullopt on a non-finite loss.
  struct EpochStats {
    double mean_loss = 0.0;
    bool finite = true;
    std::vector<Prediction> predictions;
    long steps = 0;
    bool stopped = false;
  };
  EpochStats train_epoch(int epoch);

 private:
  nlohmann::ordered_json make_row(int epoch, const std::string& split, double lr, std::optional<double> train_loss,
                                  const std::vector<LabeledEpisode>& episodes,
                                  const std::vector<Prediction>& predictions) const;

  TrainerOptions options_;
  const std::vector<LabeledEpisode>* train_;
  const std::vector<LabeledEpisode>* val_;
  Transformer model_;
  AdamW adam_;
  int epoch_ = 0;
  long total_steps_ = 0;
};

}  // namespace alchemy
