#include <doctest.h>

#include <cmath>
#include <random>

#include "alchemy/error.hpp"
#include "alchemy/optim.hpp"

using namespace alchemy;

TEST_CASE("cosine schedule endpoints") {
  OptimizerConfig c;
  c.learning_rate = 1e-3;
  c.min_lr = 1e-5;
  CHECK(lr_schedule(c, 0, 100) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(lr_schedule(c, 100, 100) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(lr_schedule(c, 50, 100) == doctest::Approx((1e-3 + 1e-5) / 2).epsilon(1e-12));
  for (int s = 1; s <= 100; ++s) CHECK(lr_schedule(c, s, 100) <= lr_schedule(c, s - 1, 100));
  CHECK_THROWS_AS(lr_schedule(c, 101, 100), Error);
  CHECK_THROWS_AS(lr_schedule(c, -1, 100), Error);
}

TEST_CASE("cosine with restarts repeats every period") {
  OptimizerConfig c;
  c.scheduler = Scheduler::kCosineWithRestarts;
  c.restart_period = 10;
  for (int s = 0; s < 10; ++s) CHECK(lr_schedule(c, s, 100) == lr_schedule(c, s + 10, 100));
  CHECK(lr_schedule(c, 10, 100) == doctest::Approx(c.learning_rate));
}

TEST_CASE("multi-step schedule") {
  OptimizerConfig c;
  c.scheduler = Scheduler::kMultiStep;
  c.learning_rate = 1e-3;
  c.milestones = {10, 20};
  c.gamma = 0.5;
  CHECK(lr_schedule(c, 9, 30) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(lr_schedule(c, 10, 30) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(lr_schedule(c, 25, 30) == doctest::Approx(2.5e-4).epsilon(1e-12));
}

TEST_CASE("constant schedule and config json") {
  OptimizerConfig c;
  c.scheduler = Scheduler::kNone;
  CHECK(lr_schedule(c, 77, 100) == c.learning_rate);
  c.grad_clip = 1.0;
  const auto back = OptimizerConfig::from_json(c.to_json());
  CHECK(back.grad_clip == 1.0);
  CHECK(back.scheduler == Scheduler::kNone);
  auto j = c.to_json();
  j["momentum"] = 0.9;
  CHECK_THROWS_AS(OptimizerConfig::from_json(j), Error);
  CHECK_THROWS_AS(scheduler_from_name("linear"), Error);
}

TEST_CASE("AdamW matches a double-precision reference") {
  OptimizerConfig cfg;
  cfg.weight_decay = 0.1;
  const std::size_t n = 64;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  std::vector<float> p(n);
  std::vector<double> pr(n), m(n, 0.0), v(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) pr[i] = p[i] = static_cast<float>(nd(rng));
  AdamW opt(n);
  for (int t = 1; t <= 20; ++t) {
    std::vector<float> g(n);
    for (auto& x : g) x = static_cast<float>(nd(rng));
    const double lr = 1e-2;
    opt.step(p, g, lr, cfg);
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(cfg.beta1, t));
      const double vh = v[i] / (1 - std::pow(cfg.beta2, t));
      pr[i] -= lr * cfg.weight_decay * pr[i];
      pr[i] -= lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
  for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(p[i] - pr[i]) <= 1e-5 * (1 + std::abs(pr[i])));
  CHECK(opt.steps() == 20);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  OptimizerConfig cfg;
  std::vector<float> p{1.0F, -2.0F, 3.0F};
  const auto before = p;
  AdamW opt(3);
  const std::vector<float> g{0.5F, 0.5F, -1.0F};
  opt.step(p, g, 0.0, cfg);
  CHECK(p == before);
}

TEST_CASE("gradient clipping bounds the update input") {
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.grad_clip = 1.0;
  std::vector<float> p(2, 0.0F);
  AdamW opt(2);
  const std::vector<float> g{3.0F, 4.0F};
  CHECK(opt.step(p, g, 1e-3, cfg) == doctest::Approx(5.0));
  CHECK(opt.first_moment()[0] == doctest::Approx(0.1 * 0.6));
  CHECK(opt.first_moment()[1] == doctest::Approx(0.1 * 0.8));
  std::vector<float> wrong(3);
  CHECK_THROWS_AS(opt.step(p, wrong, 1e-3, cfg), Error);
}
