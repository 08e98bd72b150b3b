#pragma once

// AdamW with decoupled weight decay and per-epoch learning-rate schedules.

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace alchemy {

enum class Scheduler : std::uint8_t { kNone = 0, kCosine, kCosineWithRestarts, kMultiStep };

std::string_view scheduler_name(Scheduler s);
/// Throws Error(kInvalidConfig) for unknown names.
Scheduler scheduler_from_name(std::string_view name);

struct OptimizerConfig {
  double learning_rate = 4e-4;
  double weight_decay = 0.01;
  Scheduler scheduler = Scheduler::kCosine;
  double min_lr = 1e-5;             // cosine, cosine_with_restarts
  int restart_period = 100;         // cosine_with_restarts, in schedule steps
  std::vector<int> milestones;      // multi_step, in schedule steps
  double gamma = 0.5;               // multi_step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::optional<double> grad_clip;  // global L2 norm; off when unset
  int epochs = 1000;
  int batch_size = 32;

  /// Throws Error(kInvalidConfig).
  void validate() const;
  nlohmann::ordered_json to_json() const;
  /// Strict: unknown keys rejected.
  static OptimizerConfig from_json(const nlohmann::json& j);
};

/// Learning rate at `step` of `total_steps` (0 <= step <= total_steps).
/// Throws Error(kInvalidArgument) when step is out of range.
double lr_schedule(const OptimizerConfig& cfg, int step, int total_steps);

class AdamW {
 public:
  explicit AdamW(std::size_t n) : m_(n, 0.0F), v_(n, 0.0F) {}

  /// One update. Returns the gradient's global L2 norm before clipping.
  double step(std::span<float> params, std::span<const float> grad, double lr, const OptimizerConfig& cfg);

  std::uint64_t steps() const { return t_; }
  std::vector<float>& first_moment() { return m_; }
  std::vector<float>& second_moment() { return v_; }
  const std::vector<float>& first_moment() const { return m_; }
  const std::vector<float>& second_moment() const { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  std::vector<float> m_;
  std::vector<float> v_;
  std::uint64_t t_ = 0;
};

}  // namespace alchemy
