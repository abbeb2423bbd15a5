#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fieldqc/grid.hpp"

namespace fieldqc {

enum class Correlation : std::uint8_t { iid, ar1_rows, ar1_cols, ar1_rows_cols };

/// Covariance family of a stationary Gaussian random field.
struct GrfFamily {
  Correlation correlation = Correlation::iid;
  bool nugget = false;

  bool has_row() const noexcept {
    return correlation == Correlation::ar1_rows || correlation == Correlation::ar1_rows_cols;
  }
  bool has_col() const noexcept {
    return correlation == Correlation::ar1_cols || correlation == Correlation::ar1_rows_cols;
  }
  bool correlated() const noexcept { return correlation != Correlation::iid; }
  /// A nugget on top of pure IID is not identifiable.
  bool valid() const noexcept { return !(nugget && correlation == Correlation::iid); }
  /// mu, sigma2 plus one per correlation parameter and the nugget ratio.
  int free_params() const noexcept { return 2 + has_row() + has_col() + nugget; }
  /// Smallest plot count the family can be fitted on.
  int min_plots() const noexcept { return correlated() || nugget ? 6 : 2; }
  /// Position in the canonical order iid, ar1r, ar1c, ar1rc, ar1r+n, ar1c+n, ar1rc+n.
  int ordinal() const noexcept;
  std::string name() const;

  static GrfFamily from_ordinal(int k);
  static GrfFamily parse(const std::string& s);

  auto operator<=>(const GrfFamily&) const = default;
};

inline constexpr int kFamilyCount = 7;

/// Set of candidate families, stored as a bit mask over ordinals.
class FamilySet {
 public:
  FamilySet() = default;
  FamilySet(std::initializer_list<GrfFamily> families);
  static FamilySet all();
  /// The four families without nugget.
  static FamilySet standard();
  /// Comma separated names (iid,ar1r,ar1c,ar1rc); `nugget` adds the nugget variants.
  static FamilySet parse(const std::string& list, bool nugget);

  void insert(GrfFamily f);
  bool contains(GrfFamily f) const noexcept { return (mask_ >> f.ordinal()) & 1u; }
  bool empty() const noexcept { return mask_ == 0; }
  std::uint8_t mask() const noexcept { return mask_; }
  std::vector<GrfFamily> members() const;
  std::string to_string() const;
  friend bool operator==(FamilySet, FamilySet) = default;

 private:
  std::uint8_t mask_ = 0;
};

/// Parameters of one field. Unused correlation/nugget entries stay at zero.
template <typename Scalar>
struct BasicGrfParams {
  Scalar mu{0};
  Scalar sigma2{1};
  Scalar rho_r{0};
  Scalar rho_c{0};
  Scalar phi{0};
};
using GrfParams = BasicGrfParams<double>;

inline constexpr double kRhoMax = 0.999;
inline constexpr double kPhiMax = 0.999;

void validate_params(GrfFamily family, const GrfParams& params);

struct FittedModel {
  GrfFamily family;
  GrfParams params;
  double loglik = 0;
  int n = 0;
  int k = 0;
};

enum class ScoreKind { bic, aic, cv_nll };
std::string to_string(ScoreKind s);
ScoreKind parse_score(const std::string& s);

/// Fit chosen by `select_model` together with the score that won.
struct SelectedModel {
  FittedModel fit;
  ScoreKind kind = ScoreKind::bic;
  double score = 0;
};

struct CvOptions {
  int folds = 5;
  int seed = 0;
};

enum class EvidenceLabel { anecdotal, moderate, strong, very_strong, decisive };

struct EvidenceThreshold {
  EvidenceLabel label = EvidenceLabel::decisive;
  double cutoff() const noexcept;
  std::string name() const;
  static EvidenceThreshold parse(const std::string& s);
  static std::vector<EvidenceThreshold> all();
};

/// Dense covariance over `coords` (see grf/covariance.hpp for the scalar-generic version).
Eigen::MatrixXd build_covariance(std::span<const PlotCoord> coords, GrfFamily family,
                                 const GrfParams& params);

/// Exact Gaussian log-density of the values at `coords`.
double log_likelihood(const TrialGrid& trial, std::span<const PlotCoord> coords, GrfFamily family,
                      const GrfParams& params);

/// Maximum likelihood fit; mu and sigma2 are profiled, correlations searched on a grid
/// and refined by a bounded simplex.
FittedModel fit_mle(const TrialGrid& trial, std::span<const PlotCoord> coords, GrfFamily family);

/// Same as fit_mle on raw values; `values` is aligned with `coords`.
FittedModel fit_mle(std::span<const double> values, std::span<const PlotCoord> coords,
                    GrfFamily family);

/// Fold of plot (i,j): (i*cols + j + seed) mod folds.
int cv_fold(PlotCoord c, int cols, int folds, int seed);

/// Total held-out negative log conditional density over `folds` interleaved folds.
double cv_nll(const TrialGrid& trial, std::span<const PlotCoord> coords, GrfFamily family,
              int folds = 5, int seed = 0);

/// Negative log density of `test` values given `train` values under a fitted model.
double conditional_nll(const TrialGrid& trial, std::span<const PlotCoord> train,
                       std::span<const PlotCoord> test, GrfFamily family, const GrfParams& params);

SelectedModel select_model(const TrialGrid& trial, std::span<const PlotCoord> coords,
                           const FamilySet& candidates, ScoreKind score, CvOptions cv = {});

double bic(double loglik, int k, int n);
double aic(double loglik, int k);

/// Largest value returned by bayes_factor.
inline constexpr double kMaxBayesFactor = 1e300;
/// exp(nll_b - nll_a): evidence for model a over model b, clamped to [1/kMax, kMax].
double bayes_factor(double nll_a, double nll_b);

}  // namespace fieldqc
