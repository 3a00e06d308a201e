#pragma once

#include "speed/decode.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace speed {

/// Flip counts per group boundary b in [1, G): how often a token's exit
/// classification after group b differed from the one after group b - 1.
struct FlipProfile {
  struct Boundary {
    int boundary = 0;
    std::int64_t flipped = 0;
    std::int64_t observed = 0;

    double proportion() const {
      return observed == 0 ? 0.0 : static_cast<double>(flipped) / static_cast<double>(observed);
    }
    bool operator==(const Boundary&) const = default;
  };

  std::vector<Boundary> boundaries;

  /// Adds another profile over the same number of groups.
  void merge(const FlipProfile& other);

  bool operator==(const FlipProfile&) const = default;
};

/// Counts only comparisons where both classifications were present.
FlipProfile flip_profile(const DecodeTrace& trace);

struct CostModelInput {
  double layer_bytes = 1.0;      // one unique decoder layer
  double embedding_bytes = 0.0;  // embedding / classifier matrix
  int n_unique = 1;
  int groups = 1;
  std::int64_t stages = 1;               // pipelined stages executed
  std::int64_t committed_length = 1;     // tokens committed by the pipeline
  std::int64_t baseline_iterations = 1;  // tokens decoded by the baseline
};

struct CostReport {
  double baseline_traffic = 0.0;
  double speed_traffic = 0.0;
  double speedup = 0.0;
  double asymptotic_bound = 0.0;
};

/// Weight-traffic model. The baseline streams all G * N_d layers plus the
/// classifier once per token; the pipeline streams N_d layers plus the
/// classifier once per stage, shared by every in-flight token.
CostReport cost_model(const CostModelInput& input);

struct StageSummary {
  int stages = 0;
  int commits = 0;
  int injections = 0;
  int invalidation_events = 0;
  int invalidated_tokens = 0;
  int invalidated_token_stages = 0;
  int abandoned_tokens = 0;  // still in flight when decoding stopped
  int abandoned_token_stages = 0;
  std::vector<int> occupancy;  // valid slots per stage

  /// Token-stages that did not contribute to a committed token:
  /// sum(occupancy) - commits * G.
  int wasted_token_stages(int groups) const;
};

StageSummary stage_accounting(const DecodeTrace& trace);

std::string format_profile_csv(const FlipProfile& profile);
FlipProfile parse_profile_csv(const std::string& text);

/// Scenario for a sweep row: `steady` (one commit per stage), `perfect`
/// (perfect prediction with fill and drain, S = L + G - 1) or `flip:<p>`
/// (a random scripted run with flip probability p at every boundary).
struct CostSweepSpec {
  std::vector<int> n_unique{4};
  std::vector<int> groups{3};
  std::vector<int> lengths{128};
  std::vector<double> embedding_ratios{0.0};  // B_emb / B_layer
  std::vector<std::string> scenarios{"perfect"};
  double layer_bytes = 1.0;
  std::uint64_t seed = 1;
};

struct CostSweepRow {
  int n_unique = 0;
  int groups = 0;
  int length = 0;
  double embedding_ratio = 0.0;
  std::string scenario;
  std::int64_t stages = 0;
  CostReport report;
};

/// Stages the pipeline needs for `length` tokens under `scenario`.
std::int64_t scenario_stages(const std::string& scenario, int groups, int length,
                             std::uint64_t seed);

std::vector<CostSweepRow> cost_sweep(const CostSweepSpec& spec);

std::string format_cost_csv(const std::vector<CostSweepRow>& rows);
std::vector<CostSweepRow> parse_cost_csv(const std::string& text);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_number(double value);

}  // namespace speed
