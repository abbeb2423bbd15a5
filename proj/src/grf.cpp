#include "fieldqc/grf.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Cholesky>

#include "fieldqc/errors.hpp"
#include "fieldqc/grf/covariance.hpp"
#include "fieldqc/grf/optimize.hpp"
#include "fieldqc/grf/profile.hpp"
#include "fieldqc/grf/select.hpp"

namespace fieldqc {

int GrfFamily::ordinal() const noexcept {
  const int c = static_cast<int>(correlation);
  return nugget ? 3 + c : c;
}

GrfFamily GrfFamily::from_ordinal(int k) {
  if (k < 0 || k >= kFamilyCount) throw ParamError("family ordinal out of range");
  if (k <= 3) return {static_cast<Correlation>(k), false};
  return {static_cast<Correlation>(k - 3), true};
}

std::string GrfFamily::name() const {
  static const char* base[] = {"iid", "ar1r", "ar1c", "ar1rc"};
  std::string s = base[static_cast<int>(correlation)];
  if (nugget) s += "+n";
  return s;
}

GrfFamily GrfFamily::parse(const std::string& s) {
  for (int k = 0; k < kFamilyCount; ++k)
    if (from_ordinal(k).name() == s) return from_ordinal(k);
  throw ConfigError("unknown GRF family '" + s + "'");
}

FamilySet::FamilySet(std::initializer_list<GrfFamily> families) {
  for (const auto& f : families) insert(f);
}

FamilySet FamilySet::all() {
  FamilySet s;
  for (int k = 0; k < kFamilyCount; ++k) s.insert(GrfFamily::from_ordinal(k));
  return s;
}

FamilySet FamilySet::standard() {
  FamilySet s;
  for (int k = 0; k < 4; ++k) s.insert(GrfFamily::from_ordinal(k));
  return s;
}

FamilySet FamilySet::parse(const std::string& list, bool nugget) {
  FamilySet s;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto f = GrfFamily::parse(item);
    s.insert(f);
    if (nugget && f.correlated()) s.insert({f.correlation, true});
  }
  if (s.empty()) throw ConfigError("empty family list");
  return s;
}

void FamilySet::insert(GrfFamily f) {
  if (!f.valid()) throw ParamError("nugget requires a correlated family");
  mask_ |= static_cast<std::uint8_t>(1u << f.ordinal());
}

std::vector<GrfFamily> FamilySet::members() const {
  std::vector<GrfFamily> out;
  for (int k = 0; k < kFamilyCount; ++k)
    if ((mask_ >> k) & 1u) out.push_back(GrfFamily::from_ordinal(k));
  return out;
}

std::string FamilySet::to_string() const {
  std::string s;
  for (const auto& f : members()) s += (s.empty() ? "" : ",") + f.name();
  return s;
}

void validate_params(GrfFamily family, const GrfParams& p) {
  if (!family.valid()) throw ParamError("nugget requires a correlated family");
  for (double v : {p.mu, p.sigma2, p.rho_r, p.rho_c, p.phi})
    if (!std::isfinite(v)) throw ParamError("non-finite GRF parameter");
  if (p.sigma2 <= 0) throw ParamError("sigma2 must be positive");
  if (p.rho_r < 0 || p.rho_r > kRhoMax || p.rho_c < 0 || p.rho_c > kRhoMax)
    throw ParamError("correlation outside [0, 0.999]");
  if (p.phi < 0 || p.phi >= 1) throw ParamError("nugget ratio outside [0, 1)");
}

std::string to_string(ScoreKind s) {
  switch (s) {
    case ScoreKind::bic: return "bic";
    case ScoreKind::aic: return "aic";
    case ScoreKind::cv_nll: return "cv_nll";
  }
  return "?";
}

ScoreKind parse_score(const std::string& s) {
  if (s == "bic") return ScoreKind::bic;
  if (s == "aic") return ScoreKind::aic;
  if (s == "cv_nll" || s == "nll") return ScoreKind::cv_nll;
  throw ConfigError("unknown score '" + s + "'");
}

double EvidenceThreshold::cutoff() const noexcept {
  switch (label) {
    case EvidenceLabel::anecdotal: return 1.0;
    case EvidenceLabel::moderate: return 3.0;
    case EvidenceLabel::strong: return 10.0;
    case EvidenceLabel::very_strong: return 30.0;
    case EvidenceLabel::decisive: return 100.0;
  }
  return 100.0;
}

std::string EvidenceThreshold::name() const {
  static const char* names[] = {"anecdotal", "moderate", "strong", "very_strong", "decisive"};
  return names[static_cast<int>(label)];
}

EvidenceThreshold EvidenceThreshold::parse(const std::string& s) {
  for (const auto& t : all())
    if (t.name() == s) return t;
  throw ConfigError("unknown evidence threshold '" + s + "'");
}

std::vector<EvidenceThreshold> EvidenceThreshold::all() {
  return {{EvidenceLabel::anecdotal}, {EvidenceLabel::moderate}, {EvidenceLabel::strong},
          {EvidenceLabel::very_strong}, {EvidenceLabel::decisive}};
}

double bic(double loglik, int k, int n) {
  if (k < 1 || n < 1) throw ParamError("bic needs k >= 1 and n >= 1");
  return k * std::log(static_cast<double>(n)) - 2.0 * loglik;
}

double aic(double loglik, int k) {
  if (k < 1) throw ParamError("aic needs k >= 1");
  return 2.0 * k - 2.0 * loglik;
}

double bayes_factor(double nll_a, double nll_b) {
  if (!std::isfinite(nll_a) || !std::isfinite(nll_b)) throw ParamError("non-finite NLL");
  const double max_log = std::log(kMaxBayesFactor);
  const double d = nll_b - nll_a;
  if (d >= max_log) return kMaxBayesFactor;
  if (d <= -max_log) return 1 / kMaxBayesFactor;
  return std::exp(d);
}

Eigen::MatrixXd build_covariance(std::span<const PlotCoord> coords, GrfFamily family,
                                 const GrfParams& params) {
  validate_params(family, params);
  return grf::build_covariance<double>(coords, family, params);
}

namespace {

void check_coords(const TrialGrid& trial, std::span<const PlotCoord> coords) {
  if (coords.empty()) throw InsufficientDataError("empty plot set");
  for (const auto& c : coords)
    if (!trial.shape().contains(c)) throw InvalidCoordError("plot not present in trial");
}

Eigen::VectorXd to_vector(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

double log_likelihood(const TrialGrid& trial, std::span<const PlotCoord> coords, GrfFamily family,
                      const GrfParams& params) {
  check_coords(trial, coords);
  validate_params(family, params);
  const auto values = trial.gather(coords);
  const Eigen::VectorXd y = to_vector(values);
  if (!family.correlated()) {
    const double n = static_cast<double>(y.size());
    const double ss = (y.array() - params.mu).square().sum();
    return -0.5 * n * std::log(2.0 * std::numbers::pi * params.sigma2) - 0.5 * ss / params.sigma2;
  }
  const Eigen::MatrixXd cov = grf::build_covariance<double>(coords, family, params);
  const Eigen::VectorXd mean = Eigen::VectorXd::Constant(y.size(), params.mu);
  return grf::gaussian_log_density<double>(y, mean, cov);
}

FittedModel fit_mle(std::span<const double> values, std::span<const PlotCoord> coords,
                    GrfFamily family) {
  if (!family.valid()) throw ParamError("nugget requires a correlated family");
  const int n = static_cast<int>(coords.size());
  if (n < family.min_plots())
    throw InsufficientDataError(family.name() + " needs at least " +
                                std::to_string(family.min_plots()) + " plots, got " +
                                std::to_string(n));
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*hi - *lo == 0.0) throw DegenerateDataError("all values identical");

  grf::ProfileLikelihood lik(coords, to_vector(values));
  grf::ProfileFit best;
  if (family.nugget) {
    const GrfFamily base{family.correlation, false};
    const auto base_fit = grf::maximize_profile(lik, base);
    const grf::CorrelationParams start = base_fit.theta;
    best = grf::maximize_profile(lik, family, std::span(&start, 1));
  } else {
    best = grf::maximize_profile(lik, family);
  }
  FittedModel m;
  m.family = family;
  m.params.mu = best.result.beta(0);
  m.params.sigma2 = best.result.sigma2;
  m.params.rho_r = family.has_row() ? best.theta.rho_r : 0.0;
  m.params.rho_c = family.has_col() ? best.theta.rho_c : 0.0;
  m.params.phi = family.nugget ? best.theta.phi : 0.0;
  m.loglik = best.result.loglik;
  m.n = n;
  m.k = family.free_params();
  return m;
}

FittedModel fit_mle(const TrialGrid& trial, std::span<const PlotCoord> coords, GrfFamily family) {
  check_coords(trial, coords);
  const auto values = trial.gather(coords);
  return fit_mle(values, coords, family);
}

double conditional_nll(const TrialGrid& trial, std::span<const PlotCoord> train,
                       std::span<const PlotCoord> test, GrfFamily family,
                       const GrfParams& params) {
  validate_params(family, params);
  const auto yt = trial.gather(test);
  if (!family.correlated()) {
    double nll = 0;
    for (double v : yt)
      nll += 0.5 * std::log(2.0 * std::numbers::pi * params.sigma2) +
             0.5 * (v - params.mu) * (v - params.mu) / params.sigma2;
    return nll;
  }
  const auto yr = trial.gather(train);
  std::vector<PlotCoord> all(train.begin(), train.end());
  all.insert(all.end(), test.begin(), test.end());
  const Eigen::MatrixXd cov = grf::build_covariance<double>(all, family, params);
  const auto nr = static_cast<Eigen::Index>(train.size());
  const auto nt = static_cast<Eigen::Index>(test.size());
  const auto llt = grf::factorize<double>(cov.topLeftCorner(nr, nr));
  const Eigen::MatrixXd k = llt.solve(cov.topRightCorner(nr, nt));
  const Eigen::VectorXd dr = to_vector(yr).array() - params.mu;
  const Eigen::VectorXd mean = (Eigen::VectorXd::Constant(nt, params.mu) + k.transpose() * dr).eval();
  const Eigen::MatrixXd cc = cov.bottomRightCorner(nt, nt) - cov.bottomLeftCorner(nt, nr) * k;
  const Eigen::MatrixXd sym = 0.5 * (cc + cc.transpose());
  return -grf::gaussian_log_density<double>(to_vector(yt), mean, sym);
}

int cv_fold(PlotCoord c, int cols, int folds, int seed) {
  const long key = static_cast<long>(c.i) * cols + c.j + seed;
  return static_cast<int>(((key % folds) + folds) % folds);
}

double cv_nll(const TrialGrid& trial, std::span<const PlotCoord> coords, GrfFamily family,
              int folds, int seed) {
  if (folds < 2) throw ParamError("cross-validation needs at least two folds");
  check_coords(trial, coords);
  if (static_cast<int>(coords.size()) < folds)
    throw InsufficientDataError("fewer plots than folds");
  const int cols = trial.shape().cols();
  double total = 0;
  std::vector<PlotCoord> train, test;
  for (int f = 0; f < folds; ++f) {
    train.clear();
    test.clear();
    for (const auto& c : coords) (cv_fold(c, cols, folds, seed) == f ? test : train).push_back(c);
    if (test.empty()) continue;
    const auto model = fit_mle(trial, train, family);
    total += conditional_nll(trial, train, test, family, model.params);
  }
  return total;
}

SelectedModel select_model(const TrialGrid& trial, std::span<const PlotCoord> coords,
                           const FamilySet& candidates, ScoreKind score, CvOptions cv) {
  if (candidates.empty()) throw ConfigError("empty candidate family set");
  check_coords(trial, coords);
  return grf::select_with([&](GrfFamily f) { return fit_mle(trial, coords, f); },
                          [&](GrfFamily f) { return cv_nll(trial, coords, f, cv.folds, cv.seed); },
                          candidates, score);
}

namespace grf {

ProfileLikelihood::ProfileLikelihood(std::span<const PlotCoord> coords, Eigen::VectorXd y,
                                     Eigen::MatrixXd design)
    : coords_(coords.begin(), coords.end()), y_(std::move(y)), x_(std::move(design)) {
  if (y_.size() != static_cast<Eigen::Index>(coords_.size()) || x_.rows() != y_.size())
    throw ShapeMismatchError("profile likelihood inputs do not align");
  if (y_.size() > 0) {
    const double range = y_.maxCoeff() - y_.minCoeff();
    floor_ = 1e-12 * range * range;
    if (floor_ == 0.0) floor_ = 1e-300;
  }
  // Full rectangle in row-major order?
  if (!coords_.empty() && std::is_sorted(coords_.begin(), coords_.end())) {
    int i0 = coords_.front().i, i1 = i0, j0 = coords_.front().j, j1 = j0;
    for (const auto& c : coords_) {
      i0 = std::min(i0, c.i);
      i1 = std::max(i1, c.i);
      j0 = std::min(j0, c.j);
      j1 = std::max(j1, c.j);
    }
    const long area = static_cast<long>(i1 - i0 + 1) * (j1 - j0 + 1);
    if (area == static_cast<long>(coords_.size())) rect_ = Rect{i1 - i0 + 1, j1 - j0 + 1};
  }
}

ProfileLikelihood::ProfileLikelihood(std::span<const PlotCoord> coords, Eigen::VectorXd y)
    : ProfileLikelihood(coords, y, Eigen::MatrixXd::Ones(y.size(), 1)) {}

ProfileLikelihood::Result ProfileLikelihood::finish(double logdet, Eigen::VectorXd beta,
                                                    double rss) const {
  const double n = static_cast<double>(y_.size());
  Result r;
  r.beta = std::move(beta);
  r.sigma2 = std::max(rss / n, floor_);
  r.loglik = -0.5 * n * std::log(2.0 * std::numbers::pi * r.sigma2) - 0.5 * logdet -
             0.5 * rss / r.sigma2;
  return r;
}

ProfileLikelihood::Result ProfileLikelihood::evaluate(const CorrelationParams& theta,
                                                      bool allow_separable) const {
  if (allow_separable && rect_ && theta.phi == 0.0) return evaluate_separable(theta);
  return evaluate_dense(theta);
}

ProfileLikelihood::Result ProfileLikelihood::evaluate_dense(const CorrelationParams& theta) const {
  if (theta.rho_r == 0.0 && theta.rho_c == 0.0) {
    // V = (1 - phi) I + phi I = I.
    const Eigen::MatrixXd gram = x_.transpose() * x_;
    Eigen::VectorXd beta = gram.ldlt().solve(x_.transpose() * y_);
    const double rss = (y_ - x_ * beta).squaredNorm();
    return finish(0.0, std::move(beta), rss);
  }
  const Eigen::MatrixXd v = correlation_matrix<double>(coords_, theta.rho_r, theta.rho_c, theta.phi);
  const auto llt = factorize<double>(v);
  const auto l = llt.matrixL();
  const Eigen::MatrixXd a = l.solve(x_);
  const Eigen::VectorXd b = l.solve(y_);
  Eigen::VectorXd beta = (a.transpose() * a).ldlt().solve(a.transpose() * b);
  const double rss = (b - a * beta).squaredNorm();
  double logdet = 0;
  const Eigen::MatrixXd& lm = llt.matrixLLT();
  for (Eigen::Index k = 0; k < lm.rows(); ++k) logdet += 2.0 * std::log(lm(k, k));
  return finish(logdet, std::move(beta), rss);
}

namespace {

/// Q M for the AR(1) precision Q of size m.rows(), applied along the first index.
Eigen::MatrixXd precision_rows(const Eigen::MatrixXd& m, double rho) {
  const Eigen::Index n = m.rows();
  if (rho == 0.0 || n == 1) return m;
  const double s = 1.0 / (1.0 - rho * rho);
  Eigen::MatrixXd out(n, m.cols());
  for (Eigen::Index a = 0; a < n; ++a) {
    const double d = (a == 0 || a == n - 1) ? 1.0 : 1.0 + rho * rho;
    out.row(a) = d * m.row(a);
    if (a > 0) out.row(a) -= rho * m.row(a - 1);
    if (a + 1 < n) out.row(a) -= rho * m.row(a + 1);
  }
  return s * out;
}

}  // namespace

Eigen::MatrixXd apply_separable_precision(const Eigen::MatrixXd& m, double rho_r, double rho_c) {
  const Eigen::MatrixXd rows = precision_rows(m, rho_r);
  return precision_rows(rows.transpose(), rho_c).transpose();
}

ProfileLikelihood::Result ProfileLikelihood::evaluate_separable(
    const CorrelationParams& theta) const {
  const int nr = rect_->rows;
  const int nc = rect_->cols;
  auto as_field = [&](const Eigen::VectorXd& v) {
    // Row-major coordinates map onto a row-major nr x nc field.
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
               v.data(), nr, nc)
        .eval();
  };
  const Eigen::Index p = x_.cols();
  std::vector<Eigen::MatrixXd> fields, weighted;
  for (Eigen::Index k = 0; k < p; ++k) {
    fields.push_back(as_field(x_.col(k)));
    weighted.push_back(apply_separable_precision(fields.back(), theta.rho_r, theta.rho_c));
  }
  const Eigen::MatrixXd fy = as_field(y_);
  Eigen::MatrixXd gram(p, p);
  Eigen::VectorXd cross(p);
  for (Eigen::Index a = 0; a < p; ++a) {
    cross(a) = (weighted[a].array() * fy.array()).sum();
    for (Eigen::Index b = 0; b < p; ++b) gram(a, b) = (fields[a].array() * weighted[b].array()).sum();
  }
  Eigen::VectorXd beta = gram.ldlt().solve(cross);
  const Eigen::VectorXd resid = y_ - x_ * beta;
  const Eigen::MatrixXd fr = as_field(resid);
  const double rss = (fr.array() * apply_separable_precision(fr, theta.rho_r, theta.rho_c).array()).sum();
  const double logdet = nc * (nr - 1) * std::log1p(-theta.rho_r * theta.rho_r) +
                        nr * (nc - 1) * std::log1p(-theta.rho_c * theta.rho_c);
  return finish(logdet, std::move(beta), rss);
}

namespace {

enum class Axis { rho_r, rho_c, phi };

std::vector<Axis> active_axes(GrfFamily family) {
  std::vector<Axis> axes;
  if (family.has_row()) axes.push_back(Axis::rho_r);
  if (family.has_col()) axes.push_back(Axis::rho_c);
  if (family.nugget) axes.push_back(Axis::phi);
  return axes;
}

CorrelationParams to_theta(const std::vector<Axis>& axes, const Eigen::VectorXd& x) {
  CorrelationParams t;
  for (std::size_t k = 0; k < axes.size(); ++k) {
    const double v = x[static_cast<Eigen::Index>(k)];
    switch (axes[k]) {
      case Axis::rho_r: t.rho_r = v; break;
      case Axis::rho_c: t.rho_c = v; break;
      case Axis::phi: t.phi = v; break;
    }
  }
  return t;
}

Eigen::VectorXd from_theta(const std::vector<Axis>& axes, const CorrelationParams& t) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(axes.size()));
  for (std::size_t k = 0; k < axes.size(); ++k) {
    switch (axes[k]) {
      case Axis::rho_r: x[static_cast<Eigen::Index>(k)] = t.rho_r; break;
      case Axis::rho_c: x[static_cast<Eigen::Index>(k)] = t.rho_c; break;
      case Axis::phi: x[static_cast<Eigen::Index>(k)] = t.phi; break;
    }
  }
  return x;
}

/// Coarse grid spacing per number of searched parameters.
double grid_step(std::size_t dims) {
  switch (dims) {
    case 1: return 0.05;
    case 2: return 0.1;
    default: return 0.2;
  }
}

}  // namespace

ProfileFit maximize_profile(const ProfileLikelihood& lik, GrfFamily family,
                            std::span<const CorrelationParams> extra_starts) {
  const auto axes = active_axes(family);
  if (axes.empty()) return {CorrelationParams{}, lik.evaluate(CorrelationParams{})};

  auto objective = [&](const Eigen::VectorXd& x) {
    try {
      return -lik.evaluate(to_theta(axes, x)).loglik;
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  const auto dims = axes.size();
  const double step = grid_step(dims);
  std::vector<double> ticks;
  for (int k = 0; k * step <= 0.95 + 1e-9; ++k) ticks.push_back(k * step);

  Eigen::VectorXd best_x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dims));
  double best_v = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> idx(dims, 0);
  while (true) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(dims));
    for (std::size_t k = 0; k < dims; ++k) x[static_cast<Eigen::Index>(k)] = ticks[idx[k]];
    const double v = objective(x);
    if (v < best_v) {
      best_v = v;
      best_x = x;
    }
    std::size_t k = 0;
    while (k < dims && ++idx[k] == ticks.size()) idx[k++] = 0;
    if (k == dims) break;
  }
  for (const auto& s : extra_starts) {
    const Eigen::VectorXd x = from_theta(axes, s);
    const double v = objective(x);
    if (v < best_v) {
      best_v = v;
      best_x = x;
    }
  }

  const Eigen::VectorXd lo = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dims));
  Eigen::VectorXd hi(static_cast<Eigen::Index>(dims));
  for (std::size_t k = 0; k < dims; ++k)
    hi[static_cast<Eigen::Index>(k)] = axes[k] == Axis::phi ? kPhiMax : kRhoMax;
  const auto refined =
      nelder_mead(objective, best_x, lo, hi, step / 2, 1e-6, 150 * static_cast<int>(dims));
  const Eigen::VectorXd x = refined.value <= best_v ? refined.x : best_x;
  if (!std::isfinite(std::min(refined.value, best_v)))
    throw NumericalError("likelihood could not be evaluated for any correlation value");
  const CorrelationParams theta = to_theta(axes, x);
  return {theta, lik.evaluate(theta)};
}

}  // namespace grf
}  // namespace fieldqc
