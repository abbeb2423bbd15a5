#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "fieldqc/grf.hpp"

namespace fieldqc::grf {

/// Correlation parameters searched numerically; mean effects and variance are profiled.
struct CorrelationParams {
  double rho_r = 0;
  double rho_c = 0;
  double phi = 0;
};

/// Gaussian log-likelihood of y ~ N(X beta, sigma2 V(theta)) maximised over beta and sigma2
/// for a given theta. Full rectangles without nugget are evaluated through the separable
/// AR(1) precision; everything else through a dense Cholesky factorization.
class ProfileLikelihood {
 public:
  struct Result {
    double loglik = 0;
    Eigen::VectorXd beta;
    double sigma2 = 0;
  };

  ProfileLikelihood(std::span<const PlotCoord> coords, Eigen::VectorXd y, Eigen::MatrixXd design);
  /// Intercept-only design.
  ProfileLikelihood(std::span<const PlotCoord> coords, Eigen::VectorXd y);

  Result evaluate(const CorrelationParams& theta, bool allow_separable = true) const;
  Result evaluate_dense(const CorrelationParams& theta) const;
  /// Only valid when `separable()` and theta.phi == 0.
  Result evaluate_separable(const CorrelationParams& theta) const;

  bool separable() const noexcept { return rect_.has_value(); }
  Eigen::Index size() const noexcept { return y_.size(); }
  const Eigen::VectorXd& y() const noexcept { return y_; }
  const Eigen::MatrixXd& design() const noexcept { return x_; }
  std::span<const PlotCoord> coords() const noexcept { return coords_; }
  double variance_floor() const noexcept { return floor_; }

 private:
  struct Rect {
    int rows = 0;
    int cols = 0;
  };
  Result finish(double logdet, Eigen::VectorXd beta, double rss) const;

  std::vector<PlotCoord> coords_;
  Eigen::VectorXd y_;
  Eigen::MatrixXd x_;
  std::optional<Rect> rect_;
  double floor_ = 0;
};

struct ProfileFit {
  CorrelationParams theta;
  ProfileLikelihood::Result result;
};

/// Grid search over the family's active correlation parameters, then bounded simplex refinement.
/// `extra_starts` are evaluated alongside the best grid point.
ProfileFit maximize_profile(const ProfileLikelihood& lik, GrfFamily family,
                            std::span<const CorrelationParams> extra_starts = {});

/// Separable AR(1) precision applied on both sides of a rows x cols field: Q_r M Q_c.
Eigen::MatrixXd apply_separable_precision(const Eigen::MatrixXd& m, double rho_r, double rho_c);

}  // namespace fieldqc::grf
