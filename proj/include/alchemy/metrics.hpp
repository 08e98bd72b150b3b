#pragma once

// Event classification and chain-rule factorisation of exact-match accuracy.
//
// Events for a prediction y_hat on query (x_q, z_q) with target y:
//   A   y_hat is one of the chemistry's 8 stones
//   B   y_hat lies in the target-bearing half (withheld-pair: faces of the
//       withheld axis; decomposition: faces of z_q's axis)
//   C   y_hat == y
//   R   y_hat in R_k(x_q)                       (composition)
//   EN  y_hat in H(y) u N(x_q); NR  y_hat in H(y)  (decomposition)
//   Tr / Nr / Rr  reward-adjacent, geometric neighbour, same-half neighbour
//                                               (withheld-pair)

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "alchemy/chemistry.hpp"
#include "alchemy/task_sampler.hpp"

namespace alchemy {

struct EventRecord {
  std::string episode_id;
  TaskKind task_kind = TaskKind::kWithheldPair;
  int k = 1;
  int reward_bin = 0;  // reward value of x_q: +15, +1, -1 or -3
  int predicted = 0;
  int target = 0;
  std::int64_t weight = 1;

  bool in_support = false;               // A
  bool correct_half = false;             // B
  bool exact = false;                    // C
  bool reachable = false;                // R
  bool extended_neighborhood = false;    // EN
  bool neighborhood_refinement = false;  // NR
  bool reward_adjacent = false;          // Tr
  bool geometric_neighbor = false;       // Nr
  bool same_half_adjacent = false;       // Rr
  bool target_reward_adjacent = false;   // y in Tr

  /// C => B => A (withheld-pair, decomposition), C => R => A (composition),
  /// NR => EN.
  bool nesting_holds() const;
};

/// Throws Error(kMissingOracleContext) if the episode lacks the metadata the
/// classifier needs, Error(kInvalidArgument) for a prediction outside 0..107.
EventRecord classify(const Chemistry& chem, const Episode& e, int predicted, std::string episode_id = {});

/// A count ratio; value() is null for a zero denominator.
struct Rate {
  std::int64_t num = 0;
  std::int64_t den = 0;

  std::optional<double> value() const {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  }
};

struct FactorizedMetrics {
  TaskKind task_kind = TaskKind::kWithheldPair;
  std::int64_t n = 0;
  std::int64_t a = 0;
  std::int64_t b = 0;   // A and B
  std::int64_t c = 0;
  std::int64_t r = 0;   // A and R
  std::int64_t en = 0;  // A and EN
  std::int64_t nr = 0;
  std::int64_t tr = 0;  // A and Tr
  std::int64_t nbr = 0; // A and Nr
  std::int64_t rr = 0;  // A and Rr
  std::int64_t y_in_tr = 0;
  std::int64_t c_and_y_in_tr = 0;

  Rate p_a() const { return {a, n}; }
  Rate p_c() const { return {c, n}; }
  Rate p_b_given_a() const { return {b, a}; }
  Rate one_minus_p_b_given_a() const { return {a - b, a}; }
  Rate p_c_given_ab() const { return {c, b}; }
  Rate p_r_given_a() const { return {r, a}; }
  Rate p_c_given_ar() const { return {c, r}; }
  Rate p_en_given_a() const { return {en, a}; }
  Rate p_nr_given_en() const { return {nr, en}; }
  Rate p_c_given_b() const { return {c, b}; }
  Rate p_c_given_a() const { return {c, a}; }
  Rate p_tr_given_a() const { return {tr, a}; }
  Rate p_nbr_given_a() const { return {nbr, a}; }
  Rate p_rr_given_a() const { return {rr, a}; }
  Rate p_c_given_y_in_tr() const { return {c_and_y_in_tr, y_in_tr}; }

  /// The middle factor of the chain rule: B|A, or R|A for composition.
  Rate middle_factor() const;
  /// The last factor: C|A&B, or C|A&R for composition.
  Rate last_factor() const;

  /// True iff N * P[A] * P[mid|A] * P[C|A&mid] == count(C) in exact rational
  /// arithmetic (a zero-denominator factor implies count(C) == 0).
  bool chain_rule_identity_exact() const;

  void add(const EventRecord& rec);
};

FactorizedMetrics factorize(const std::vector<EventRecord>& records, TaskKind kind);

struct RewardBinMetrics {
  int reward = 0;
  FactorizedMetrics metrics;
};

/// Bins ordered +15, +1, -1, -3.
std::array<RewardBinMetrics, 4> reward_binned_metrics(const std::vector<EventRecord>& records);

struct ExtendedNeighborhood {
  Rate p_en_given_a;
  Rate p_nr_given_en;
};
ExtendedNeighborhood extended_neighborhood_metrics(const std::vector<EventRecord>& records);

enum class ChanceKind : std::uint8_t { kUniformAll108 = 0, kUniformInSupport, kUniformReachable, kUniformCorrectHalf };

std::string_view chance_kind_name(ChanceKind k);
ChanceKind chance_kind_from_name(std::string_view name);

struct EpisodeContext {
  const Chemistry* chemistry = nullptr;
  const Episode* episode = nullptr;
  std::string id;
};

/// Candidate predictions the reference predictor draws from uniformly.
/// Throws Error(kIncompatibleKind) when the kind does not apply to the task.
std::vector<int> chance_candidates(ChanceKind kind, const Chemistry& chem, const Episode& e);

/// Exact expectation: every candidate of every episode is classified with an
/// integer weight so that each episode carries equal total mass.
FactorizedMetrics chance_baseline(ChanceKind kind, const std::vector<EpisodeContext>& episodes);
/// Same predictor, `samples` seeded draws (episodes visited round-robin).
FactorizedMetrics chance_baseline_simulated(ChanceKind kind, const std::vector<EpisodeContext>& episodes,
                                            std::int64_t samples, std::uint64_t seed);
/// Records for the exact expectation (used for reward-binned chance levels).
std::vector<EventRecord> chance_records(ChanceKind kind, const std::vector<EpisodeContext>& episodes);

struct StageOptions {
  double threshold = 0.9;
  int sustain = 5;
  std::map<std::string, double> per_metric_threshold;
};

struct StageBoundary {
  std::string metric;
  std::optional<int> epoch;
};

struct StageReport {
  std::vector<StageBoundary> boundaries;  // input order
  std::vector<std::string> order;         // metrics that crossed, by epoch
};

using MetricCurve = std::vector<std::optional<double>>;

/// First epoch from which a metric stays >= its threshold for `sustain`
/// consecutive epochs. `epochs[i]` labels curve index i.
StageReport stage_report(const std::vector<std::pair<std::string, MetricCurve>>& curves,
                         const std::vector<int>& epochs, const StageOptions& options = {});

/// Flat key/value form used in metric log rows: rates (null on zero
/// denominator) plus their numerators and denominators.
nlohmann::ordered_json metrics_to_json(const FactorizedMetrics& m);
/// Appends reward-bin columns (prefix "rw_pos15_" etc.).
void append_reward_bins(nlohmann::ordered_json& row, const std::array<RewardBinMetrics, 4>& bins);

std::string reward_bin_key(int reward);

}  // namespace alchemy
