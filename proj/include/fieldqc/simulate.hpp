#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "fieldqc/grf.hpp"
#include "fieldqc/grid.hpp"
#include "fieldqc/segment.hpp"

namespace fieldqc {

using Rng = std::mt19937_64;

/// Sub-seed for (tag, index) under a root seed; independent of execution order.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t index = 0);

/// One-dimensional prior. Beta draws are multiplied by `scale`.
struct Distribution {
  enum class Kind { point, normal, lognormal, uniform, beta };
  Kind kind = Kind::point;
  double a = 0;  // value | mean | meanlog | lower | alpha
  double b = 0;  // -     | sd   | sdlog   | upper | beta
  double scale = 1;

  double sample(Rng& rng) const;
  /// Smallest and largest value the distribution can produce.
  std::pair<double, double> support() const;

  static Distribution point(double v) { return {Kind::point, v, 0, 1}; }
  static Distribution normal(double mean, double sd) { return {Kind::normal, mean, sd, 1}; }
  static Distribution lognormal(double m, double s) { return {Kind::lognormal, m, s, 1}; }
  static Distribution uniform(double lo, double hi) { return {Kind::uniform, lo, hi, 1}; }
  static Distribution beta(double alpha, double beta, double scale = 1) {
    return {Kind::beta, alpha, beta, scale};
  }
};

/// Priors of a single patch. `sigma` is the standard deviation (sigma2 = sigma^2).
struct PatchPrior {
  Distribution mu = Distribution::normal(0, 1);
  Distribution sigma = Distribution::lognormal(0, 0.5);
  Distribution rho_r = Distribution::beta(2, 2, 0.95);
  Distribution rho_c = Distribution::beta(2, 2, 0.95);
  /// Beta(2,5) shrunk onto the admissible nugget range.
  Distribution phi = Distribution::beta(2, 5, kPhiMax);
  /// Probability per family ordinal.
  std::array<double, kFamilyCount> families{1. / 7, 1. / 7, 1. / 7, 1. / 7, 1. / 7, 1. / 7, 1. / 7};

  void validate() const;
  GrfFamily sample_family(Rng& rng) const;
  GrfParams sample_params(GrfFamily family, Rng& rng) const;
};

struct PriorConfig {
  /// One entry shared by both patches, or one entry per patch.
  std::vector<PatchPrior> patches{PatchPrior{}};
  int max_param_retries = 5;
  int max_geometry_retries = 4;
  /// Separation evidence the true partition must reach besides surviving global authentication.
  EvidenceThreshold min_evidence{EvidenceLabel::anecdotal};
  /// Pipeline settings used by the distinctness check and the oracle verification.
  PipelineConfig pipeline{};

  const PatchPrior& for_patch(int k) const;
  void validate() const;

  /// JSON document; see README for keys.
  static PriorConfig parse(std::istream& in);
  static PriorConfig parse_file(const std::string& path);
};

struct TrueModel {
  GrfFamily family;
  GrfParams params;
};

struct SimTrial {
  TrialGrid trial;
  Partition truth;
  Partition oracle;
  std::map<int, TrueModel> models;
  std::uint64_t seed = 0;
  int param_retries = 0;
  int geometry_retries = 0;
  /// Evidence for the two true patches over one merged patch.
  double separation_bf = 1;
};

/// Lloyd's algorithm with k seeds drawn from the present plots.
Partition lloyd_partition(const GridShape& shape, int k, std::uint64_t seed);
/// Lloyd's algorithm from explicit starting centroids (row, col).
Partition lloyd_partition(const GridShape& shape, std::vector<std::array<double, 2>> centroids,
                          int max_iterations = 100);

/// Values of one stationary field over `coords`, aligned with `coords`.
std::vector<double> sample_field(std::span<const PlotCoord> coords, GrfFamily family,
                                 const GrfParams& params, Rng& rng);

SimTrial simulate_trial(const GridShape& shape, const PriorConfig& priors, std::uint64_t seed);

std::vector<SimTrial> run_study(const std::vector<GridShape>& shapes, const PriorConfig& priors,
                                int n_trials, std::uint64_t seed, int jobs = 1);

/// `RxC` text form.
GridShape parse_shape(const std::string& s);
/// One shape per line (`RxC`); blank lines and `#` comments are skipped.
std::vector<GridShape> parse_shapes(std::istream& in);

void write_truth_json(std::ostream& out, const SimTrial& sim);
/// Reads a sidecar back into `sim` (trial must already be loaded).
void read_truth_json(std::istream& in, SimTrial& sim);

}  // namespace fieldqc
