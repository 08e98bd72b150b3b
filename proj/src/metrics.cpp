#include "alchemy/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "alchemy/error.hpp"
#include "alchemy/random.hpp"

namespace alchemy {

namespace {

int decomposition_axis(const Chemistry& chem, const Episode& e) {
  if (e.query_potions.size() != 1) {
    throw Error(ErrorCode::kMissingOracleContext, "decomposition query must be a single potion");
  }
  return chem.axis_of(e.query_potions.front());
}

/// Target-bearing half for tasks that have one.
VertexSet target_half(const Chemistry& chem, const Episode& e, Vertex xq) {
  switch (e.task_kind) {
    case TaskKind::kWithheldPair: {
      const auto& axis = e.withheld_axis;
      if (!axis) throw Error(ErrorCode::kMissingOracleContext, "withheld-pair episode lacks withheld_axis");
      return face_containing(xq, *axis).complement();
    }
    case TaskKind::kDecomposition:
      return face_containing(xq, decomposition_axis(chem, e)).complement();
    case TaskKind::kComposition:
      break;
  }
  throw Error(ErrorCode::kIncompatibleKind, "composition episodes have no target half");
}

void put_rate(nlohmann::ordered_json& j, const std::string& key, const Rate& r) {
  auto v = r.value();
  j[key] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

bool EventRecord::nesting_holds() const {
  if (exact && !in_support) return false;
  if (neighborhood_refinement && !extended_neighborhood) return false;
  if (task_kind == TaskKind::kComposition) {
    return (!exact || reachable) && (!reachable || in_support);
  }
  return (!exact || correct_half) && (!correct_half || in_support);
}

EventRecord classify(const Chemistry& chem, const Episode& e, int predicted, std::string episode_id) {
  if (predicted < 0 || predicted >= kNumStoneClasses) {
    throw Error(ErrorCode::kInvalidArgument, "prediction out of range: " + std::to_string(predicted));
  }
  auto xq = chem.vertex_of(e.query_start);
  auto y = chem.vertex_of(e.target);
  if (!xq || !y) throw Error(ErrorCode::kMissingOracleContext, "episode stones are not in the chemistry");

  EventRecord rec;
  rec.episode_id = std::move(episode_id);
  rec.task_kind = e.task_kind;
  rec.k = e.k();
  rec.reward_bin = e.query_start.reward();
  rec.predicted = predicted;
  rec.target = stone_index(e.target);

  const auto pv = chem.vertex_of_class(predicted);
  rec.in_support = pv.has_value();
  rec.exact = predicted == rec.target;

  switch (e.task_kind) {
    case TaskKind::kWithheldPair: {
      const VertexSet half = target_half(chem, e, *xq);
      const VertexSet tr = reward_adjacent_set(chem, *xq);
      rec.target_reward_adjacent = tr.contains(*y);
      if (pv) {
        rec.correct_half = half.contains(*pv);
        rec.reward_adjacent = tr.contains(*pv);
        rec.geometric_neighbor = neighbors(*xq).contains(*pv);
        rec.same_half_adjacent = same_half_adjacent_in_support(*xq, *e.withheld_axis).contains(*pv);
      }
      break;
    }
    case TaskKind::kComposition:
      if (pv) rec.reachable = reachable_set(*xq, e.hl_query).contains(*pv);
      break;
    case TaskKind::kDecomposition: {
      const VertexSet half = target_half(chem, e, *xq);
      if (pv) {
        rec.correct_half = half.contains(*pv);
        rec.neighborhood_refinement = rec.correct_half;
        rec.extended_neighborhood = (half | neighbors(*xq)).contains(*pv);
      }
      break;
    }
  }
  return rec;
}

Rate FactorizedMetrics::middle_factor() const {
  return task_kind == TaskKind::kComposition ? p_r_given_a() : p_b_given_a();
}

Rate FactorizedMetrics::last_factor() const {
  return task_kind == TaskKind::kComposition ? p_c_given_ar() : p_c_given_ab();
}

bool FactorizedMetrics::chain_rule_identity_exact() const {
  const Rate mid = middle_factor();
  if (n <= 0) return false;
  if (!(0 <= c && c <= mid.num && mid.num <= a && a <= n)) return false;
  if (a == 0 || mid.num == 0) return c == 0;
  // N * (a/N) * (mid/a) * (c/mid) as one fraction, compared to c/1.
  using I = __int128;
  const I num = I(n) * I(a) * I(mid.num) * I(c);
  const I den = I(n) * I(a) * I(mid.num);
  return num == I(c) * den;
}

void FactorizedMetrics::add(const EventRecord& rec) {
  const auto w = rec.weight;
  n += w;
  if (rec.in_support) a += w;
  if (rec.in_support && rec.correct_half) b += w;
  if (rec.exact) c += w;
  if (rec.in_support && rec.reachable) r += w;
  if (rec.in_support && rec.extended_neighborhood) en += w;
  if (rec.neighborhood_refinement) nr += w;
  if (rec.in_support && rec.reward_adjacent) tr += w;
  if (rec.in_support && rec.geometric_neighbor) nbr += w;
  if (rec.in_support && rec.same_half_adjacent) rr += w;
  if (rec.target_reward_adjacent) {
    y_in_tr += w;
    if (rec.exact) c_and_y_in_tr += w;
  }
}

FactorizedMetrics factorize(const std::vector<EventRecord>& records, TaskKind kind) {
  FactorizedMetrics m;
  m.task_kind = kind;
  for (const auto& rec : records) {
    if (rec.task_kind != kind) throw Error(ErrorCode::kIncompatibleKind, "record task kind differs from requested kind");
    m.add(rec);
  }
  return m;
}

std::array<RewardBinMetrics, 4> reward_binned_metrics(const std::vector<EventRecord>& records) {
  std::array<RewardBinMetrics, 4> bins;
  constexpr std::array<int, 4> kOrder = {15, 1, -1, -3};
  for (int i = 0; i < 4; ++i) {
    bins[i].reward = kOrder[i];
    bins[i].metrics.task_kind = TaskKind::kWithheldPair;
  }
  for (const auto& rec : records) {
    if (rec.task_kind != TaskKind::kWithheldPair) {
      throw Error(ErrorCode::kIncompatibleKind, "reward-binned metrics need withheld-pair records");
    }
    auto it = std::find(kOrder.begin(), kOrder.end(), rec.reward_bin);
    if (it == kOrder.end()) throw Error(ErrorCode::kInvalidArgument, "unknown reward bin");
    bins[static_cast<std::size_t>(it - kOrder.begin())].metrics.add(rec);
  }
  return bins;
}

ExtendedNeighborhood extended_neighborhood_metrics(const std::vector<EventRecord>& records) {
  FactorizedMetrics m = factorize(records, TaskKind::kDecomposition);
  return {m.p_en_given_a(), m.p_nr_given_en()};
}

std::string_view chance_kind_name(ChanceKind k) {
  switch (k) {
    case ChanceKind::kUniformAll108:
      return "uniform_all_108";
    case ChanceKind::kUniformInSupport:
      return "uniform_in_support";
    case ChanceKind::kUniformReachable:
      return "uniform_reachable";
    case ChanceKind::kUniformCorrectHalf:
      return "uniform_correct_half";
  }
  return "unknown";
}

ChanceKind chance_kind_from_name(std::string_view name) {
  for (auto k : {ChanceKind::kUniformAll108, ChanceKind::kUniformInSupport, ChanceKind::kUniformReachable,
                 ChanceKind::kUniformCorrectHalf}) {
    if (chance_kind_name(k) == name) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown chance baseline '" + std::string(name) + "'");
}

std::vector<int> chance_candidates(ChanceKind kind, const Chemistry& chem, const Episode& e) {
  std::vector<int> out;
  auto xq = chem.vertex_of(e.query_start);
  if (!xq) throw Error(ErrorCode::kMissingOracleContext, "query start not in chemistry");
  auto push_set = [&](VertexSet s) {
    for (Vertex v : s.to_vector()) out.push_back(stone_index(chem.stone(v)));
  };
  switch (kind) {
    case ChanceKind::kUniformAll108:
      out.resize(kNumStoneClasses);
      std::iota(out.begin(), out.end(), 0);
      break;
    case ChanceKind::kUniformInSupport:
      push_set(VertexSet(0xff));
      break;
    case ChanceKind::kUniformReachable:
      if (e.task_kind != TaskKind::kComposition) {
        throw Error(ErrorCode::kIncompatibleKind, "uniform_reachable applies to composition episodes only");
      }
      push_set(reachable_set(*xq, e.hl_query));
      break;
    case ChanceKind::kUniformCorrectHalf:
      if (e.task_kind == TaskKind::kComposition) {
        throw Error(ErrorCode::kIncompatibleKind, "uniform_correct_half does not apply to composition episodes");
      }
      push_set(target_half(chem, e, *xq));
      break;
  }
  return out;
}

std::vector<EventRecord> chance_records(ChanceKind kind, const std::vector<EpisodeContext>& episodes) {
  std::vector<std::vector<int>> cands;
  cands.reserve(episodes.size());
  std::int64_t lcm = 1;
  for (const auto& ctx : episodes) {
    cands.push_back(chance_candidates(kind, *ctx.chemistry, *ctx.episode));
    lcm = std::lcm(lcm, static_cast<std::int64_t>(cands.back().size()));
  }
  std::vector<EventRecord> out;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto w = lcm / static_cast<std::int64_t>(cands[i].size());
    for (int p : cands[i]) {
      auto rec = classify(*episodes[i].chemistry, *episodes[i].episode, p, episodes[i].id);
      rec.weight = w;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

FactorizedMetrics chance_baseline(ChanceKind kind, const std::vector<EpisodeContext>& episodes) {
  if (episodes.empty()) throw Error(ErrorCode::kInvalidArgument, "chance baseline needs episodes");
  const TaskKind task = episodes.front().episode->task_kind;
  return factorize(chance_records(kind, episodes), task);
}

FactorizedMetrics chance_baseline_simulated(ChanceKind kind, const std::vector<EpisodeContext>& episodes,
                                            std::int64_t samples, std::uint64_t seed) {
  if (episodes.empty()) throw Error(ErrorCode::kInvalidArgument, "chance baseline needs episodes");
  FactorizedMetrics m;
  m.task_kind = episodes.front().episode->task_kind;
  Rng rng(derive_seed(seed, {0xc4a9ce}));
  for (std::int64_t i = 0; i < samples; ++i) {
    const auto& ctx = episodes[static_cast<std::size_t>(i) % episodes.size()];
    auto cands = chance_candidates(kind, *ctx.chemistry, *ctx.episode);
    const int p = cands[rng.uniform(cands.size())];
    m.add(classify(*ctx.chemistry, *ctx.episode, p, ctx.id));
  }
  return m;
}

StageReport stage_report(const std::vector<std::pair<std::string, MetricCurve>>& curves,
                         const std::vector<int>& epochs, const StageOptions& options) {
  if (options.sustain < 1) throw Error(ErrorCode::kInvalidArgument, "sustain must be >= 1");
  StageReport report;
  for (const auto& [name, curve] : curves) {
    if (curve.size() != epochs.size()) throw Error(ErrorCode::kShapeMismatch, "curve '" + name + "' length mismatch");
    double threshold = options.threshold;
    if (auto it = options.per_metric_threshold.find(name); it != options.per_metric_threshold.end()) {
      threshold = it->second;
    }
    StageBoundary b{name, std::nullopt};
    int run = 0;
    for (std::size_t i = 0; i < curve.size(); ++i) {
      run = (curve[i] && *curve[i] >= threshold) ? run + 1 : 0;
      if (run == options.sustain) {
        b.epoch = epochs[i + 1 - static_cast<std::size_t>(options.sustain)];
        break;
      }
    }
    report.boundaries.push_back(b);
  }
  std::vector<StageBoundary> crossed;
  for (const auto& b : report.boundaries) {
    if (b.epoch) crossed.push_back(b);
  }
  std::stable_sort(crossed.begin(), crossed.end(),
                   [](const StageBoundary& x, const StageBoundary& y) { return *x.epoch < *y.epoch; });
  for (const auto& b : crossed) report.order.push_back(b.metric);
  return report;
}

std::string reward_bin_key(int reward) {
  switch (reward) {
    case 15:
      return "pos15";
    case 1:
      return "pos1";
    case -1:
      return "neg1";
    case -3:
      return "neg3";
    default:
      throw Error(ErrorCode::kInvalidArgument, "unknown reward value " + std::to_string(reward));
  }
}

nlohmann::ordered_json metrics_to_json(const FactorizedMetrics& m) {
  nlohmann::ordered_json j;
  j["n"] = m.n;
  j["count_a"] = m.a;
  j["count_c"] = m.c;
  put_rate(j, "p_a", m.p_a());
  put_rate(j, "p_c", m.p_c());
  switch (m.task_kind) {
    case TaskKind::kWithheldPair:
    case TaskKind::kDecomposition:
      j["count_b"] = m.b;
      put_rate(j, "p_b_given_a", m.p_b_given_a());
      put_rate(j, "one_minus_p_b_given_a", m.one_minus_p_b_given_a());
      put_rate(j, "p_c_given_ab", m.p_c_given_ab());
      break;
    case TaskKind::kComposition:
      j["count_r"] = m.r;
      put_rate(j, "p_r_given_a", m.p_r_given_a());
      put_rate(j, "p_c_given_ar", m.p_c_given_ar());
      break;
  }
  if (m.task_kind == TaskKind::kDecomposition) {
    j["count_en"] = m.en;
    j["count_nr"] = m.nr;
    put_rate(j, "p_en_given_a", m.p_en_given_a());
    put_rate(j, "p_nr_given_en", m.p_nr_given_en());
  }
  if (m.task_kind == TaskKind::kWithheldPair) {
    j["count_tr"] = m.tr;
    j["count_nbr"] = m.nbr;
    j["count_rr"] = m.rr;
    j["count_y_in_tr"] = m.y_in_tr;
    j["count_c_and_y_in_tr"] = m.c_and_y_in_tr;
    put_rate(j, "p_tr_given_a", m.p_tr_given_a());
    put_rate(j, "p_nbr_given_a", m.p_nbr_given_a());
    put_rate(j, "p_rr_given_a", m.p_rr_given_a());
    put_rate(j, "p_c_given_y_in_tr", m.p_c_given_y_in_tr());
  }
  return j;
}

void append_reward_bins(nlohmann::ordered_json& row, const std::array<RewardBinMetrics, 4>& bins) {
  for (const auto& bin : bins) {
    const std::string p = "rw_" + reward_bin_key(bin.reward) + "_";
    const auto& m = bin.metrics;
    row[p + "n"] = m.n;
    row[p + "count_a"] = m.a;
    row[p + "count_b"] = m.b;
    put_rate(row, p + "p_c_given_b", m.p_c_given_b());
    put_rate(row, p + "p_c_given_a", m.p_c_given_a());
    put_rate(row, p + "p_tr_given_a", m.p_tr_given_a());
    put_rate(row, p + "p_nbr_given_a", m.p_nbr_given_a());
    put_rate(row, p + "p_rr_given_a", m.p_rr_given_a());
    put_rate(row, p + "p_c_given_y_in_tr", m.p_c_given_y_in_tr());
  }
}

}  // namespace alchemy
