#pragma once

#include <istream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fieldqc/grf.hpp"
#include "fieldqc/grid.hpp"

namespace fieldqc {

/// Fixed-effect design aligned with a trial's present plots (row-major order).
struct DesignMatrix {
  Eigen::MatrixXd x;
  CoordSet plots;
  std::vector<std::string> labels;
  /// Labels of columns removed because they were linearly dependent on the kept ones.
  std::vector<std::string> dropped;

  static DesignMatrix intercept(const GridShape& shape);
};

/// Drops dependent columns (column-pivoted QR); throws DesignError if nothing estimable remains.
DesignMatrix reduce_rank(DesignMatrix d);

/// CSV `row,col,block[,variety]`; builds intercept plus treatment-coded block (and variety)
/// columns. Every present plot of `shape` must be listed exactly once.
DesignMatrix parse_design(std::istream& in, const GridShape& shape);
DesignMatrix parse_design_file(const std::string& path, const GridShape& shape);

struct FirstStageFit {
  Eigen::VectorXd beta;
  std::vector<std::string> labels;
  TrialGrid marginal;
  TrialGrid conditional;
  FittedModel grf;
  int rounds = 0;
};

/// Generalised least squares under a GRF, alternating between the mean effects and the
/// covariance fitted on the residuals.
FirstStageFit gls_fit(const TrialGrid& trial, const DesignMatrix& design,
                      const FamilySet& candidates, ScoreKind score = ScoreKind::bic);
FirstStageFit gls_fit(const TrialGrid& trial, const DesignMatrix& design, GrfFamily family);

/// Solves (X' S^-1 X) b = X' S^-1 y.
Eigen::VectorXd gls_beta(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                         const Eigen::MatrixXd& cov);

}  // namespace fieldqc
