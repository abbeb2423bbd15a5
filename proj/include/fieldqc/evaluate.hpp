#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "fieldqc/grid.hpp"
#include "fieldqc/segment.hpp"
#include "fieldqc/simulate.hpp"
#include "fieldqc/tree.hpp"

namespace fieldqc {

struct SimilarityScore {
  double ari = 0;
  /// Mean over patches of `a` of the best Jaccard overlap with a patch of `b` (not symmetric).
  double best_match_jaccard = 0;
};

/// Adjusted Rand index of the plot labelings; 1 when both partitions are single patches.
SimilarityScore similarity(const Partition& a, const Partition& b);
double adjusted_rand_index(const Partition& a, const Partition& b);

/// Bottom-up sweep over sibling groups that merges whenever the merge does not lower ARI to `truth`.
Partition oracle_bottom_up(const IndexTree& tree, const Partition& truth);
/// Greedy merging by ARI to `truth` down to one patch; returns the best iterate.
Partition oracle_authenticate(const Partition& parts, const Partition& truth);

struct OptimalMerge {
  Partition partition;
  SimilarityScore score;
};
OptimalMerge optimal_merge(const Partition& detected, const Partition& truth);

/// One benchmark pipeline. Oracle variants replace the data scores of identification and
/// authentication with similarity to the oracle partition.
struct Variant {
  std::string name;
  TreeKind tree = TreeKind::binary;
  IdentifyKind identify = IdentifyKind::top_down;
  bool oracle = false;

  /// `binary`, `quad`, `top_down`, `bottom_up` and `oracle`, joined by '+'.
  static Variant parse(const std::string& s);
};
std::vector<Variant> parse_variants(const std::string& list);

struct BenchmarkRow {
  std::string variant;
  int trial = 0;
  std::string trial_name;
  std::string error;
  int identified = 0;
  int cycle1 = 0;
  int cycle2 = 0;
  int final_count = 0;
  SimilarityScore identified_sim;
  SimilarityScore final_sim;
  /// Oracle variants: similarity of the oracle-authenticated partition before verification.
  SimilarityScore before_verify_sim;
  SimilarityScore optimal_sim;
  std::vector<int> threshold_counts;
  double separation_bf = 1;
  double seconds = 0;
};

struct BenchmarkSummary {
  std::vector<BenchmarkRow> rows;
};

BenchmarkSummary run_benchmark(const std::vector<SimTrial>& trials, const PipelineConfig& config,
                               const std::vector<Variant>& variants, int jobs = 1);

/// One row per trial and variant; wall-clock timings are left to write_timings_csv.
void write_summary_csv(std::ostream& out, const BenchmarkSummary& summary);
/// Per-variant aggregates and patch-count / similarity histograms.
void write_summary_json(std::ostream& out, const BenchmarkSummary& summary);
void write_timings_csv(std::ostream& out, const BenchmarkSummary& summary);

}  // namespace fieldqc
