#include <doctest.h>

#include <cmath>
#include <random>

#include "alchemy/error.hpp"
#include "alchemy/metrics.hpp"
#include "oracles.hpp"

using namespace alchemy;

namespace {

struct Pool {
  std::vector<Chemistry> chems;
  std::vector<Episode> episodes;
  std::vector<EpisodeContext> contexts() const {
    std::vector<EpisodeContext> out;
    for (std::size_t i = 0; i < episodes.size(); ++i) {
      out.push_back({&chems[episodes[i].chemistry_id], &episodes[i], std::to_string(i)});
    }
    return out;
  }
};

Pool make_pool(TaskKind kind, int k, int n_chems) {
  Pool p;
  for (int i = 0; i < n_chems; ++i) p.chems.push_back(generate_chemistry(1000 + static_cast<std::uint64_t>(i)));
  for (int i = 0; i < n_chems; ++i) {
    const auto id = static_cast<std::uint32_t>(i);
    const auto& c = p.chems[static_cast<std::size_t>(i)];
    switch (kind) {
      case TaskKind::kWithheldPair:
        for (auto& e : build_withheld_pair_episodes(c, id, static_cast<std::uint64_t>(i))) p.episodes.push_back(e);
        break;
      case TaskKind::kComposition:
        for (int j = 0; j < 4; ++j) p.episodes.push_back(build_composition_episode(c, id, k, static_cast<std::uint64_t>(i * 4 + j)));
        break;
      case TaskKind::kDecomposition:
        for (int j = 0; j < 4; ++j) {
          p.episodes.push_back(build_decomposition_episode(c, id, k, SupportMode::kNoBacktrack, kDefaultMaxSupport,
                                                           static_cast<std::uint64_t>(i * 4 + j)));
        }
        break;
    }
  }
  return p;
}

bool rate_is(const Rate& r, std::int64_t num, std::int64_t den) { return r.den > 0 && r.num * den == num * r.den; }

}  // namespace

TEST_CASE("uniform in-support predictor scores exactly 1/8") {
  for (auto kind : {TaskKind::kWithheldPair, TaskKind::kDecomposition}) {
    for (int k : {2, 3, 4, 5}) {
      if (kind == TaskKind::kWithheldPair && k > 2) break;
      const Pool pool = make_pool(kind, kind == TaskKind::kWithheldPair ? 1 : k, 20);
      const auto m = chance_baseline(ChanceKind::kUniformInSupport, pool.contexts());
      CHECK(rate_is(m.p_c(), 1, 8));
      CHECK(rate_is(m.p_a(), 1, 1));
      CHECK(rate_is(m.p_b_given_a(), 1, 2));
      CHECK(rate_is(m.p_c_given_ab(), 1, 4));
      CHECK(std::abs(*m.p_c().value() - 0.125) <= 1e-12);
    }
  }
}

TEST_CASE("reachable-given-in-support chance is 3/8 for even k and 4/8 for odd k") {
  for (int k = 2; k <= 5; ++k) {
    const Pool pool = make_pool(TaskKind::kComposition, k, 20);
    const auto m = chance_baseline(ChanceKind::kUniformInSupport, pool.contexts());
    CHECK(rate_is(m.p_r_given_a(), k % 2 == 0 ? 3 : 4, 8));
    CHECK(rate_is(m.p_c(), 1, 8));
    const auto r = chance_baseline(ChanceKind::kUniformReachable, pool.contexts());
    CHECK(rate_is(r.p_r_given_a(), 1, 1));
    CHECK(rate_is(r.p_c(), 1, k % 2 == 0 ? 3 : 4));
  }
}

TEST_CASE("reward-adjacency membership rates by reward bin") {
  const Pool pool = make_pool(TaskKind::kWithheldPair, 1, 40);
  const auto records = chance_records(ChanceKind::kUniformInSupport, pool.contexts());
  const auto bins = reward_binned_metrics(records);
  CHECK(bins[0].reward == 15);
  CHECK(bins[1].reward == 1);
  CHECK(bins[2].reward == -1);
  CHECK(bins[3].reward == -3);
  for (const auto& bin : bins) {
    REQUIRE(bin.metrics.n > 0);
    const bool extreme = bin.reward == 15 || bin.reward == -3;
    CHECK(rate_is(bin.metrics.p_tr_given_a(), extreme ? 3 : 4, 8));
    CHECK(rate_is(bin.metrics.p_nbr_given_a(), 3, 8));
    CHECK(rate_is(bin.metrics.p_rr_given_a(), 2, 8));
  }
}

TEST_CASE("uniform over all 108 classes") {
  const Pool pool = make_pool(TaskKind::kWithheldPair, 1, 10);
  const auto m = chance_baseline(ChanceKind::kUniformAll108, pool.contexts());
  CHECK(rate_is(m.p_c(), 1, 108));
  CHECK(rate_is(m.p_a(), 8, 108));
}

TEST_CASE("chance kinds reject incompatible tasks") {
  const Pool wp = make_pool(TaskKind::kWithheldPair, 1, 2);
  CHECK_THROWS_AS(chance_baseline(ChanceKind::kUniformReachable, wp.contexts()), Error);
  const Pool comp = make_pool(TaskKind::kComposition, 2, 2);
  CHECK_THROWS_AS(chance_baseline(ChanceKind::kUniformCorrectHalf, comp.contexts()), Error);
}

TEST_CASE("simulated chance levels agree with exact expectations") {
  const Pool wp = make_pool(TaskKind::kWithheldPair, 1, 30);
  const auto sim = chance_baseline_simulated(ChanceKind::kUniformInSupport, wp.contexts(), 10000, 3);
  CHECK(std::abs(*sim.p_c().value() - 0.125) <= 0.01);
  CHECK(std::abs(*sim.p_b_given_a().value() - 0.5) <= 0.01);
  for (int k : {2, 3}) {
    const Pool comp = make_pool(TaskKind::kComposition, k, 30);
    const auto s = chance_baseline_simulated(ChanceKind::kUniformInSupport, comp.contexts(), 10000, 4);
    CHECK(std::abs(*s.p_r_given_a().value() - (k == 2 ? 0.375 : 0.5)) <= 0.01);
  }
  const auto again = chance_baseline_simulated(ChanceKind::kUniformInSupport, wp.contexts(), 10000, 3);
  CHECK(again.c == sim.c);
}

TEST_CASE("classification agrees with a brute-force oracle on fuzzed predictions") {
  std::mt19937_64 rng(99);
  for (auto kind : {TaskKind::kWithheldPair, TaskKind::kComposition, TaskKind::kDecomposition}) {
    for (int k : {2, 3}) {
      const Pool pool = make_pool(kind, kind == TaskKind::kWithheldPair ? 1 : k, 15);
      std::vector<EventRecord> records;
      for (const auto& e : pool.episodes) {
        const Chemistry& c = pool.chems[e.chemistry_id];
        for (int trial = 0; trial < 20; ++trial) {
          int pred;
          if (trial % 2 == 0) pred = static_cast<int>(rng() % 108);
          else pred = stone_index(c.stone(static_cast<Vertex>(rng() % 8)));
          const auto rec = classify(c, e, pred);
          records.push_back(rec);
          CHECK(rec.nesting_holds());

          int pv = -1;
          for (int v = 0; v < 8; ++v) {
            if (stone_index(c.stone(static_cast<Vertex>(v))) == pred) pv = v;
          }
          const int x = *c.vertex_of(e.query_start);
          const int y = *c.vertex_of(e.target);
          CHECK(rec.in_support == (pv >= 0));
          CHECK(rec.exact == (pred == stone_index(e.target)));
          if (kind == TaskKind::kComposition) {
            CHECK(rec.reachable == (pv >= 0 && oracle::reachable(c, x, k).contains(pv)));
          } else {
            const int axis = kind == TaskKind::kWithheldPair ? *e.withheld_axis : c.axis_of(e.query_potions[0]);
            CHECK(rec.correct_half == (pv >= 0 && ((pv >> axis) & 1) == ((y >> axis) & 1)));
            if (kind == TaskKind::kWithheldPair && pv >= 0) {
              const int dl = std::abs(c.stone(static_cast<Vertex>(pv)).reward_level - c.stone(static_cast<Vertex>(x)).reward_level);
              CHECK(rec.reward_adjacent == (dl == 1));
              CHECK(rec.geometric_neighbor == (oracle::popcount(pv ^ x) == 1));
              CHECK(rec.same_half_adjacent ==
                    (oracle::popcount(pv ^ x) == 1 && ((pv >> axis) & 1) == ((x >> axis) & 1)));
            }
          }
        }
      }
      const auto m = factorize(records, kind);
      CHECK(m.chain_rule_identity_exact());
      CHECK(m.n == static_cast<std::int64_t>(records.size()));
      if (kind == TaskKind::kWithheldPair) break;
    }
  }
}

TEST_CASE("chain rule identity holds for arbitrary count combinations") {
  FactorizedMetrics m;
  m.task_kind = TaskKind::kWithheldPair;
  m.n = 97;
  m.a = 61;
  m.b = 29;
  m.c = 13;
  CHECK(m.chain_rule_identity_exact());
  const double prod = *m.p_a().value() * *m.p_b_given_a().value() * *m.p_c_given_ab().value();
  CHECK(std::abs(prod - *m.p_c().value()) <= 1e-12);
  m.a = 0;
  m.b = 0;
  m.c = 0;
  CHECK(m.chain_rule_identity_exact());
  CHECK_FALSE(m.p_b_given_a().value().has_value());
}

TEST_CASE("metric rows use null for empty denominators") {
  FactorizedMetrics m;
  m.task_kind = TaskKind::kComposition;
  m.n = 4;
  const auto j = metrics_to_json(m);
  CHECK(j["p_a"] == 0.0);
  CHECK(j["p_r_given_a"].is_null());
  CHECK(j["p_c_given_ar"].is_null());
  CHECK_FALSE(j.contains("p_b_given_a"));
}

TEST_CASE("stage report finds sustained crossings") {
  const std::vector<int> epochs{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto curve = [](std::initializer_list<double> v) {
    MetricCurve c;
    for (double x : v) c.emplace_back(x);
    return c;
  };
  std::vector<std::pair<std::string, MetricCurve>> curves{
      {"p_a", curve({0.1, 0.95, 0.95, 0.95, 0.95, 0.95, 0.95, 0.95, 0.95, 0.95})},
      {"p_b_given_a", curve({0.5, 0.5, 0.5, 0.95, 0.2, 0.95, 0.95, 0.95, 0.95, 0.95})},
      {"p_c_given_ab", curve({0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2})}};
  const auto report = stage_report(curves, epochs, StageOptions{});
  CHECK(report.boundaries[0].epoch == 1);
  CHECK(report.boundaries[1].epoch == 5);
  CHECK_FALSE(report.boundaries[2].epoch.has_value());
  CHECK(report.order == std::vector<std::string>{"p_a", "p_b_given_a"});

  StageOptions loose;
  loose.per_metric_threshold["p_c_given_ab"] = 0.1;
  CHECK(stage_report(curves, epochs, loose).boundaries[2].epoch == 0);
  CHECK_THROWS_AS(stage_report(curves, {0, 1}, StageOptions{}), Error);
}

TEST_CASE("classify rejects bad predictions and missing context") {
  const Chemistry c = generate_chemistry(1);
  Episode e = build_withheld_pair_episodes(c, 0, 1)[0];
  CHECK_THROWS_AS(classify(c, e, 108), Error);
  e.withheld_axis.reset();
  try {
    classify(c, e, 0);
    FAIL("expected an error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::kMissingOracleContext);
  }
}

TEST_CASE("extended neighbourhood under the uniform in-support predictor") {
  for (int k = 2; k <= 5; ++k) {
    const Pool pool = make_pool(TaskKind::kDecomposition, k, 20);
    const auto en = extended_neighborhood_metrics(chance_records(ChanceKind::kUniformInSupport, pool.contexts()));
    CHECK(rate_is(en.p_en_given_a, 6, 8));
    CHECK(rate_is(en.p_nr_given_en, 2, 3));
  }
}

TEST_CASE("hand-picked predictions") {
  const Chemistry c = generate_chemistry(12);
  const Episode wp = build_withheld_pair_episodes(c, 0, 3)[0];
  const int axis = *wp.withheld_axis;
  const Vertex x = *c.vertex_of(wp.query_start);
  for (int other = 0; other < 3; ++other) {
    if (other == axis) continue;
    const auto n = static_cast<Vertex>(x ^ (1 << other));
    const auto rec = classify(c, wp, stone_index(c.stone(n)));
    CHECK(rec.in_support);
    CHECK_FALSE(rec.correct_half);
    CHECK(rec.same_half_adjacent);
    CHECK(rec.geometric_neighbor);
  }
  const auto hit = classify(c, wp, stone_index(wp.target));
  CHECK((hit.in_support && hit.correct_half && hit.exact));

  const Episode dec = build_decomposition_episode(c, 0, 3, SupportMode::kNoBacktrack, 96, 4);
  const int daxis = c.axis_of(dec.query_potions[0]);
  const Vertex dx = *c.vertex_of(dec.query_start);
  for (int other = 0; other < 3; ++other) {
    if (other == daxis) continue;
    const auto rec = classify(c, dec, stone_index(c.stone(static_cast<Vertex>(dx ^ (1 << other)))));
    CHECK(rec.extended_neighborhood);
    CHECK_FALSE(rec.neighborhood_refinement);
  }
  const auto dhit = classify(c, dec, stone_index(dec.target));
  CHECK((dhit.extended_neighborhood && dhit.neighborhood_refinement));
}

TEST_CASE("stage report on a noisy monotone curve") {
  std::vector<int> epochs;
  MetricCurve curve;
  std::mt19937_64 rng(1);
  for (int e = 0; e < 300; ++e) {
    epochs.push_back(e);
    const double noise = static_cast<double>(rng() % 1000) / 1e5;
    curve.emplace_back(e < 120 ? 0.5 + 0.3 * e / 120.0 + noise : 0.91 + noise);
  }
  const auto rep = stage_report({{"p", curve}}, epochs);
  CHECK(rep.boundaries[0].epoch == 120);
  MetricCurve flat(300, 0.5);
  CHECK_FALSE(stage_report({{"p", flat}}, epochs).boundaries[0].epoch.has_value());
}
