#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fieldqc/grf.hpp"
#include "fieldqc/grid.hpp"
#include "fieldqc/tree.hpp"

namespace fieldqc {

class ModelStore;

/// A partition together with the selected model of each patch.
/// Patches whose plots admit no fit (e.g. constant values) carry no model.
struct PatchModelSet {
  Partition partition;
  std::map<int, SelectedModel> models;

  std::size_t size() const noexcept { return partition.size(); }
  /// Sum of patch scores; +inf when some patch has no model.
  double total_score() const;
};

enum class AuthMode { local, global };
enum class VerifyStage { cycle1, cycle2 };
enum class IdentifyKind { top_down, bottom_up };

std::string to_string(IdentifyKind k);
IdentifyKind parse_identify_kind(const std::string& s);

struct PipelineConfig {
  TreeKind tree = TreeKind::binary;
  IdentifyKind identify = IdentifyKind::top_down;
  ScoreKind score = ScoreKind::cv_nll;
  /// Score used while growing the binary tree; cheaper than the pipeline score.
  ScoreKind tree_score = ScoreKind::bic;
  FamilySet candidates = FamilySet::standard();
  AdjacencyKind adjacency = AdjacencyKind::rook;
  EvidenceThreshold threshold{EvidenceLabel::decisive};
  SplitConstraints split{};
  int min_plots_local = 2;
  int min_plots_global = 6;
  int max_cycle_iterations = 20;
  /// Cap on applied switches per verification call; 0 means twice the plot count.
  int max_switches = 0;
  CvOptions cv{};

  void validate() const;
};

struct MergeCandidate {
  int p = 0;
  int q = 0;
  double posterior = 0;
  /// Log-density of p's values under the model fitted on p and q together.
  double log_density = 0;
};

struct SwitchCandidate {
  PlotCoord plot;
  int from = 0;
  int to = 0;
  double posterior = 0;
  double stay_posterior = 0;
};

/// Fits every patch with model selection.
PatchModelSet fit_patches(ModelStore& store, const Partition& part, const PipelineConfig& config);

PatchModelSet identify_top_down(ModelStore& store, const IndexTree& tree,
                                const PipelineConfig& config);
PatchModelSet identify_bottom_up(ModelStore& store, const IndexTree& tree,
                                 const PipelineConfig& config);
PatchModelSet identify(ModelStore& store, const IndexTree& tree, const PipelineConfig& config);

std::vector<MergeCandidate> authentication_posteriors(ModelStore& store, const PatchModelSet& pms,
                                                      AuthMode mode, const PipelineConfig& config);

PatchModelSet authenticate(ModelStore& store, const PatchModelSet& pms, AuthMode mode,
                           const PipelineConfig& config);

/// Result of thresholded authentication for every evidence level at once.
struct FinalAuthentication {
  PatchModelSet result;
  /// Patch count reached at each threshold, in EvidenceThreshold::all() order.
  std::vector<int> counts;
};

/// Global merge order; a merge is accepted while the evidence for keeping the pair apart
/// stays below the cutoff.
FinalAuthentication authenticate_final(ModelStore& store, const PatchModelSet& pms,
                                       EvidenceThreshold threshold, const PipelineConfig& config);

/// Evidence (Bayes factor on cross-validated NLL) for keeping p and q apart versus merged.
double separation_evidence(ModelStore& store, const CoordSet& p, const CoordSet& q,
                           const PipelineConfig& config);

std::vector<SwitchCandidate> switch_posteriors(const TrialGrid& trial, const Partition& part,
                                               const std::map<int, FittedModel>& models,
                                               AdjacencyKind adjacency);

PatchModelSet verify(ModelStore& store, const PatchModelSet& pms, VerifyStage stage,
                     const PipelineConfig& config);

struct StageSnapshot {
  std::string name;
  PatchModelSet patches;
  double score = 0;
};

struct QcReport {
  TrialGrid trial;
  PipelineConfig config;
  std::vector<StageSnapshot> stages;
  int patches = 0;
  bool flagged = false;
  /// Bayes factor of the final partition against a single patch (cross-validated NLL).
  double evidence = 1;
  /// Final patch count per evidence threshold, anecdotal to decisive.
  std::vector<int> threshold_counts;

  const StageSnapshot& stage(const std::string& name) const;
  const PatchModelSet& final_patches() const { return stages.back().patches; }
};

/// Full pipeline: tree, identification, the two authentication/verification cycles and
/// the thresholded final stage.
QcReport detect(const TrialGrid& trial, const PipelineConfig& config);
QcReport detect(ModelStore& store, const PipelineConfig& config,
                const IndexTree* prebuilt_tree = nullptr);

IndexTree build_tree(ModelStore& store, const PipelineConfig& config);

void write_report_json(std::ostream& out, const QcReport& report);

struct ReportView {
  TrialGrid trial;
  Partition final_partition;
  int patches = 0;
};
/// Reads back the analysed values and final partition of a report written by write_report_json.
ReportView read_report(std::istream& in);

}  // namespace fieldqc
