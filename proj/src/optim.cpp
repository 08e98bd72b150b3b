#include "alchemy/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "alchemy/error.hpp"

namespace alchemy {

std::string_view scheduler_name(Scheduler s) {
  switch (s) {
    case Scheduler::kNone:
      return "none";
    case Scheduler::kCosine:
      return "cosine";
    case Scheduler::kCosineWithRestarts:
      return "cosine_with_restarts";
    case Scheduler::kMultiStep:
      return "multi_step";
  }
  return "none";
}

Scheduler scheduler_from_name(std::string_view name) {
  for (auto s : {Scheduler::kNone, Scheduler::kCosine, Scheduler::kCosineWithRestarts, Scheduler::kMultiStep}) {
    if (scheduler_name(s) == name) return s;
  }
  throw Error(ErrorCode::kInvalidConfig, "optimizer.scheduler: unknown scheduler '" + std::string(name) + "'");
}

void OptimizerConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, "optimizer." + what); };
  if (!(learning_rate >= 0.0 && std::isfinite(learning_rate))) bad("learning_rate must be >= 0");
  if (!(weight_decay >= 0.0 && std::isfinite(weight_decay))) bad("weight_decay must be >= 0");
  if (!(min_lr >= 0.0 && std::isfinite(min_lr))) bad("min_lr must be >= 0");
  if (restart_period < 1) bad("restart_period must be >= 1");
  if (!(gamma > 0.0 && std::isfinite(gamma))) bad("gamma must be > 0");
  if (!std::is_sorted(milestones.begin(), milestones.end())) bad("milestones must be sorted");
  for (int m : milestones) {
    if (m < 0) bad("milestones must be >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) bad("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) bad("beta2 must be in [0, 1)");
  if (!(eps > 0.0)) bad("eps must be > 0");
  if (grad_clip && !(*grad_clip > 0.0)) bad("grad_clip must be > 0");
  if (epochs < 0) bad("epochs must be >= 0");
  if (batch_size < 1) bad("batch_size must be >= 1");
}

nlohmann::ordered_json OptimizerConfig::to_json() const {
  nlohmann::ordered_json j;
  j["learning_rate"] = learning_rate;
  j["weight_decay"] = weight_decay;
  j["scheduler"] = scheduler_name(scheduler);
  j["min_lr"] = min_lr;
  j["restart_period"] = restart_period;
  j["milestones"] = milestones;
  j["gamma"] = gamma;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["eps"] = eps;
  j["grad_clip"] = grad_clip ? nlohmann::ordered_json(*grad_clip) : nlohmann::ordered_json(nullptr);
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  return j;
}

OptimizerConfig OptimizerConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidConfig, "optimizer: expected an object");
  OptimizerConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "scheduler") c.scheduler = scheduler_from_name(value.get<std::string>());
      else if (key == "min_lr") c.min_lr = value.get<double>();
      else if (key == "restart_period") c.restart_period = value.get<int>();
      else if (key == "milestones") c.milestones = value.get<std::vector<int>>();
      else if (key == "gamma") c.gamma = value.get<double>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "eps") c.eps = value.get<double>();
      else if (key == "grad_clip") {
        if (value.is_null()) c.grad_clip.reset();
        else c.grad_clip = value.get<double>();
      } else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else throw Error(ErrorCode::kInvalidConfig, "optimizer." + key + ": unknown key");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("optimizer: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

double cosine(double base, double min_lr, double frac) {
  return min_lr + (base - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace

double lr_schedule(const OptimizerConfig& cfg, int step, int total_steps) {
  if (step < 0 || total_steps < 0 || step > total_steps) {
    throw Error(ErrorCode::kInvalidArgument, "lr_schedule: step " + std::to_string(step) + " outside [0, " +
                                                 std::to_string(total_steps) + "]");
  }
  const double base = cfg.learning_rate;
  switch (cfg.scheduler) {
    case Scheduler::kNone:
      return base;
    case Scheduler::kCosine:
      if (total_steps == 0) return base;
      return cosine(base, cfg.min_lr, static_cast<double>(step) / total_steps);
    case Scheduler::kCosineWithRestarts: {
      const int within = step % cfg.restart_period;
      return cosine(base, cfg.min_lr, static_cast<double>(within) / cfg.restart_period);
    }
    case Scheduler::kMultiStep: {
      const auto passed = std::upper_bound(cfg.milestones.begin(), cfg.milestones.end(), step) - cfg.milestones.begin();
      return base * std::pow(cfg.gamma, static_cast<double>(passed));
    }
  }
  return base;
}

double AdamW::step(std::span<float> params, std::span<const float> grad, double lr, const OptimizerConfig& cfg) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "AdamW: buffer size mismatch");
  }
  double sq = 0.0;
  for (float g : grad) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  double clip = 1.0;
  if (cfg.grad_clip && norm > *cfg.grad_clip) clip = *cfg.grad_clip / norm;

  ++t_;
  const auto b1 = static_cast<float>(cfg.beta1);
  const auto b2 = static_cast<float>(cfg.beta2);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  const auto step_size = static_cast<float>(lr / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(cfg.eps);
  const auto decay = static_cast<float>(lr * cfg.weight_decay);
  const auto scale = static_cast<float>(clip);

  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grad[i] * scale;
    m_[i] = b1 * m_[i] + (1.0F - b1) * g;
    v_[i] = b2 * v_[i] + (1.0F - b2) * g * g;
    float p = params[i];
    p -= decay * p;
    p -= step_size * m_[i] / (std::sqrt(v_[i]) * inv_sqrt_bc2 + eps);
    params[i] = p;
  }
  return norm;
}

}  // namespace alchemy
