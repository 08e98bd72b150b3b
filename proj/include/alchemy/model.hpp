#pragma once

// Decoder-only transformer with a 108-way classification head read off the
// final position. Pre-norm residual blocks, causal multi-head attention,
// GELU feed-forward, learned absolute position embeddings by default.
//
// All parameters live in one flat float buffer so the optimiser and
// checkpoints can treat them as a single vector; gradients use the same
// layout.

#include <cstdint>
#include <memory>
#include <new>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "alchemy/token_codec.hpp"

namespace alchemy {

/// 64-byte aligned storage so vectorised kernels see the same alignment for
/// every buffer (results are then independent of where the buffer lives).
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using AlignedFloats = std::vector<float, AlignedAllocator<float>>;

enum class PositionalEncoding : std::uint8_t { kLearned = 0, kSinusoidal };

struct ModelConfig {
  int n_layers = 4;
  int d_model = 256;
  int d_ff = 512;
  int n_heads = 4;
  float dropout = 0.1F;
  int vocab_size = kVocabSize;
  int n_classes = kNumStoneClasses;
  int max_seq_len = 192;
  PositionalEncoding positional = PositionalEncoding::kLearned;

  /// Throws Error(kInvalidConfig).
  void validate() const;
  /// Closed-form parameter count.
  std::size_t parameter_count() const;

  nlohmann::ordered_json to_json() const;
  /// Strict: unknown keys are rejected with Error(kInvalidConfig).
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Per-sequence training/evaluation output.
struct BatchResult {
  double loss_sum = 0.0;           // summed cross-entropy over sequences
  std::vector<int> predictions;    // argmax at the final position, lowest index on ties
  bool finite = true;
};

class Transformer {
 public:
  Transformer(const ModelConfig& config, std::uint64_t seed);
  ~Transformer();
  Transformer(const Transformer&) = delete;
  Transformer& operator=(const Transformer&) = delete;
  Transformer(Transformer&&) noexcept;
  Transformer& operator=(Transformer&&) noexcept;

  const ModelConfig& config() const { return config_; }
  std::span<float> parameters() { return params_; }
  std::span<const float> parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  /// Logits for every position of each sequence, row-major
  /// (batch, seq, n_classes). Dropout disabled. PAD tokens attend only to
  /// PAD tokens and are invisible to non-PAD positions. Throws
  /// Error(kShapeMismatch) for ragged batches, over-long sequences or token
  /// ids outside the vocabulary.
  std::vector<float> forward(const std::vector<std::vector<TokenId>>& batch) const;

  /// Final-position logits (batch, n_classes) for encoded episodes, dropout
  /// disabled.
  std::vector<float> final_logits(std::span<const EncodedEpisode* const> batch) const;

  /// Argmax predictions with dropout disabled.
  BatchResult evaluate(std::span<const EncodedEpisode* const> batch) const;

  /// Cross-entropy at each sequence's final position. Adds
  /// `scale * d(loss_sum)/d(params)` into `grad` (same layout as
  /// parameters()). Dropout is active when dropout_seed is set and the
  /// configured rate is positive.
  BatchResult loss_and_gradient(std::span<const EncodedEpisode* const> batch, std::span<float> grad, float scale,
                                std::optional<std::uint64_t> dropout_seed) const;

  /// Names and offsets of every parameter tensor (for diagnostics/tests).
  struct TensorInfo {
    std::string name;
    std::size_t offset;
    std::size_t size;
  };
  std::vector<TensorInfo> tensors() const;

 private:
  struct Impl;
  ModelConfig config_;
  AlignedFloats params_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace alchemy
