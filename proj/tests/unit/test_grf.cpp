#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fieldqc/errors.hpp"
#include "fieldqc/grf.hpp"
#include "fieldqc/grf/covariance.hpp"
#include "fieldqc/grf/profile.hpp"
#include "fieldqc/simulate.hpp"

using namespace fieldqc;

namespace {

const double kLn2Pi = std::log(2 * std::numbers::pi);

TrialGrid full_trial(int rows, int cols, const std::vector<double>& values) {
  return TrialGrid(GridShape(rows, cols), values);
}

// Multivariate normal log-density by a hand-rolled long double Cholesky, entries written
// out from the covariance definition without touching the library's matrix code.
long double oracle_mvn(const std::vector<PlotCoord>& coords, const std::vector<double>& y,
                       long double mu, long double s2, long double rr, long double rc,
                       long double phi) {
  const std::size_t n = coords.size();
  std::vector<std::vector<long double>> a(n, std::vector<long double>(n));
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t q = 0; q < n; ++q) {
      const long double corr = std::pow(rr, std::abs(coords[p].i - coords[q].i)) *
                               std::pow(rc, std::abs(coords[p].j - coords[q].j));
      a[p][q] = s2 * ((1 - phi) * corr + (p == q ? phi : 0));
    }
  std::vector<std::vector<long double>> l(n, std::vector<long double>(n, 0));
  for (std::size_t j = 0; j < n; ++j) {
    long double d = a[j][j];
    for (std::size_t k = 0; k < j; ++k) d -= l[j][k] * l[j][k];
    l[j][j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      long double s = a[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
      l[i][j] = s / l[j][j];
    }
  }
  std::vector<long double> z(n);
  long double quad = 0, logdet = 0;
  for (std::size_t i = 0; i < n; ++i) {
    long double s = y[i] - mu;
    for (std::size_t k = 0; k < i; ++k) s -= l[i][k] * z[k];
    z[i] = s / l[i][i];
    quad += z[i] * z[i];
    logdet += std::log(l[i][i]);
  }
  return -0.5L * n * std::log(2 * std::numbers::pi_v<long double>) - logdet - 0.5L * quad;
}

std::vector<double> simulate_values(const GridShape& shape, GrfFamily family, const GrfParams& p,
                                    std::uint64_t seed) {
  Rng rng(seed);
  const auto coords = shape.present();
  return sample_field(coords, family, p, rng);
}

const GrfFamily kIid{};
const GrfFamily kRow{Correlation::ar1_rows, false};
const GrfFamily kRowCol{Correlation::ar1_rows_cols, false};
const GrfFamily kRowColN{Correlation::ar1_rows_cols, true};

}  // namespace

TEST_CASE("family bookkeeping") {
  for (int k = 0; k < kFamilyCount; ++k) {
    const auto f = GrfFamily::from_ordinal(k);
    CHECK(f.valid());
    CHECK(f.ordinal() == k);
    CHECK(GrfFamily::parse(f.name()) == f);
    CHECK(f.free_params() >= 2);
    CHECK(f.free_params() <= 5);
  }
  CHECK_FALSE(GrfFamily{Correlation::iid, true}.valid());
  CHECK(kRowColN.free_params() == 5);
  CHECK(FamilySet::all().members().size() == 7);
  CHECK(FamilySet::standard().members().size() == 4);
  CHECK(FamilySet::parse("iid,ar1r", true).members().size() == 3);
}

TEST_CASE("evidence thresholds") {
  const std::vector<double> cut{1, 3, 10, 30, 100};
  const auto all = EvidenceThreshold::all();
  REQUIRE(all.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(all[k].cutoff() == cut[k]);
    CHECK(EvidenceThreshold::parse(all[k].name()).label == all[k].label);
  }
  CHECK_THROWS_AS(EvidenceThreshold::parse("overwhelming"), ConfigError);
}

TEST_CASE("build_covariance examples") {
  const std::vector<PlotCoord> three{{0, 0}, {0, 1}, {0, 2}};
  const auto iid = build_covariance(three, kIid, {0, 2, 0, 0, 0});
  CHECK(iid.isApprox(2 * Eigen::MatrixXd::Identity(3, 3)));

  const std::vector<PlotCoord> pair{{0, 0}, {1, 1}};
  const auto rc = build_covariance(pair, kRowCol, {0, 1, 0.5, 0.4, 0});
  CHECK(rc(0, 1) == doctest::Approx(0.2));
  const auto rcn = build_covariance(pair, kRowColN, {0, 1, 0.5, 0.4, 0.3});
  CHECK(rcn(0, 1) == doctest::Approx(0.14));
  CHECK(rcn(0, 0) == doctest::Approx(1.0));

  CHECK_THROWS_AS(build_covariance(pair, kRowCol, {0, std::nan(""), 0.5, 0.4, 0}), ParamError);
}

TEST_CASE("build_covariance is symmetric with eigenvalues bounded by the nugget") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 1);
  for (int rep = 0; rep < 25; ++rep) {
    const int rows = 2 + static_cast<int>(u(rng) * 4), cols = 2 + static_cast<int>(u(rng) * 4);
    CoordSet coords;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        if (u(rng) < 0.8) coords.push_back({i, j});
    if (coords.empty()) continue;
    const GrfParams p{0, 0.1 + 3 * u(rng), 0.95 * u(rng), 0.95 * u(rng), 0.01 + 0.98 * u(rng)};
    const auto cov = build_covariance(coords, kRowColN, p);
    CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() == 0.0);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    CHECK(es.eigenvalues().minCoeff() >= p.sigma2 * p.phi - 1e-10);
  }
}

TEST_CASE("build_covariance on a full rectangle is a Kronecker product") {
  const GridShape g(3, 4);
  const auto coords = g.present();
  const auto cov = build_covariance(coords, kRowCol, {0, 1.7, 0.6, 0.3, 0});
  const auto kron = grf::kronecker<double>(grf::ar1_matrix(0.6, 3), grf::ar1_matrix(0.3, 4));
  CHECK((cov - 1.7 * kron).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("log_likelihood examples") {
  CHECK(log_likelihood(full_trial(1, 1, {0}), {{{0, 0}}}, kIid, {0, 1, 0, 0, 0}) ==
        doctest::Approx(-0.5 * kLn2Pi).epsilon(1e-12));
  const std::vector<PlotCoord> two{{0, 0}, {0, 1}};
  CHECK(log_likelihood(full_trial(1, 2, {1, -1}), two, kIid, {0, 1, 0, 0, 0}) ==
        doctest::Approx(-kLn2Pi - 1).epsilon(1e-12));

  const GridShape g(3, 3);
  const auto y = simulate_values(g, kRowCol, {0.5, 1.3, 0.6, 0.3, 0}, 4);
  const auto coords = g.present();
  const double got = log_likelihood(TrialGrid(g, y), coords, kRowCol, {0.5, 1.3, 0.6, 0.3, 0});
  CHECK(std::abs(got - static_cast<double>(oracle_mvn(coords, y, 0.5, 1.3, 0.6, 0.3, 0))) < 1e-10);
}

TEST_CASE("log_likelihood matches the dense oracle on random subsets and families") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0, 1);
  for (int rep = 0; rep < 30; ++rep) {
    const GridShape g(5, 5);
    CoordSet coords;
    for (const auto& c : g.present())
      if (u(rng) < 0.6) coords.push_back(c);
    if (coords.empty()) continue;
    const auto family = GrfFamily::from_ordinal(rep % kFamilyCount);
    GrfParams p{u(rng) - 0.5, 0.2 + u(rng), 0, 0, 0};
    if (family.has_row()) p.rho_r = 0.9 * u(rng);
    if (family.has_col()) p.rho_c = 0.9 * u(rng);
    if (family.nugget) p.phi = 0.9 * u(rng);
    const auto y = simulate_values(g, kIid, {0, 1, 0, 0, 0}, 100 + rep);
    const TrialGrid t(g, y);
    const auto vals = t.gather(coords);
    const double got = log_likelihood(t, coords, family, p);
    const long double want = oracle_mvn(coords, vals, p.mu, p.sigma2, p.rho_r, p.rho_c, p.phi);
    CHECK(std::abs(got - static_cast<double>(want)) < 1e-9);
  }
}

TEST_CASE("separable profile evaluation agrees with the dense path") {
  const GridShape g(6, 7);
  const auto coords = g.present();
  const auto y = simulate_values(g, kRowCol, {1, 2, 0.7, 0.4, 0}, 8);
  const grf::ProfileLikelihood lik(coords, Eigen::Map<const Eigen::VectorXd>(y.data(), y.size()));
  REQUIRE(lik.separable());
  for (double rr : {0.0, 0.3, 0.95})
    for (double rc : {0.0, 0.5, 0.99}) {
      const auto a = lik.evaluate_dense({rr, rc, 0});
      const auto b = lik.evaluate_separable({rr, rc, 0});
      CHECK(std::abs(a.loglik - b.loglik) < 1e-8);
      CHECK(std::abs(a.sigma2 - b.sigma2) < 1e-8 * a.sigma2);
    }
}

TEST_CASE("fit_mle examples") {
  const std::vector<PlotCoord> six{{0, 0}, {0, 1}, {0, 2}, {1, 0}, {1, 1}, {1, 2}};
  const auto t = full_trial(2, 3, {1, 2, 3, 4, 5, 6});
  const auto fit = fit_mle(t, six, kIid);
  CHECK(fit.params.mu == doctest::Approx(3.5));
  CHECK(fit.params.sigma2 == doctest::Approx(35.0 / 12));
  CHECK(fit.k == 2);
  CHECK(fit.n == 6);
  CHECK(fit.loglik == doctest::Approx(log_likelihood(t, six, kIid, fit.params)).epsilon(1e-12));

  const std::vector<PlotCoord> five(six.begin(), six.begin() + 5);
  CHECK_THROWS_AS(fit_mle(t, five, kRow), InsufficientDataError);
  CHECK_THROWS_AS(fit_mle(full_trial(2, 3, {2, 2, 2, 2, 2, 2}), six, kIid), DegenerateDataError);
}

TEST_CASE("fit_mle recovers separable correlations on a 20x20 field") {
  const GridShape g(20, 20);
  const auto y = simulate_values(g, kRowCol, {0, 1, 0.5, 0.5, 0}, 2024);
  const TrialGrid t(g, y);
  const auto fit = fit_mle(t, g.present(), kRowCol);
  CHECK(std::abs(fit.params.rho_r - 0.5) <= 0.1);
  CHECK(std::abs(fit.params.rho_c - 0.5) <= 0.1);
  CHECK(fit.k == 4);
}

TEST_CASE("fit_mle is at least as good as nearby grid points") {
  const GridShape g(6, 6);
  const auto coords = g.present();
  for (int rep = 0; rep < 4; ++rep) {
    const auto family = GrfFamily::from_ordinal(rep == 3 ? 6 : rep);
    const auto y = simulate_values(g, kRowColN, {0, 1, 0.6, 0.2, 0.3}, 50 + rep);
    const TrialGrid t(g, y);
    const auto fit = fit_mle(t, coords, family);
    CHECK(fit.loglik == doctest::Approx(log_likelihood(t, coords, family, fit.params)).epsilon(1e-10));
    for (double rr : {0.0, 0.25, 0.5, 0.75, 0.95})
      for (double rc : {0.0, 0.25, 0.5, 0.75, 0.95})
        for (double phi : {0.0, 0.3, 0.6}) {
          GrfParams p = fit.params;
          if (family.has_row()) p.rho_r = rr;
          if (family.has_col()) p.rho_c = rc;
          if (family.nugget) p.phi = phi;
          CHECK(log_likelihood(t, coords, family, p) <= fit.loglik + 1e-9);
        }
  }
}

TEST_CASE("adding a nugget never lowers the maximised likelihood") {
  const GridShape g(5, 6);
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto y = simulate_values(g, kRowColN, {0, 1, 0.5, 0.5, 0.4}, seed);
    const TrialGrid t(g, y);
    for (auto c : {Correlation::ar1_rows, Correlation::ar1_cols, Correlation::ar1_rows_cols}) {
      const double without = fit_mle(t, g.present(), {c, false}).loglik;
      const double with = fit_mle(t, g.present(), {c, true}).loglik;
      CHECK(with >= without - 1e-9);
    }
  }
}

TEST_CASE("select_model examples") {
  const GridShape g(10, 10);
  const auto coords = g.present();
  const auto rowcorr = TrialGrid(g, simulate_values(g, kRow, {0, 1, 0.9, 0, 0}, 31));
  CHECK(select_model(rowcorr, coords, FamilySet{kIid}, ScoreKind::bic).fit.family == kIid);
  CHECK(select_model(rowcorr, coords, FamilySet::all(), ScoreKind::bic).fit.family.has_row());
  const auto white = TrialGrid(g, simulate_values(g, kIid, {0, 1, 0, 0, 0}, 32));
  CHECK(select_model(white, coords, FamilySet::all(), ScoreKind::bic).fit.family == kIid);

  const std::vector<PlotCoord> small{{0, 0}, {0, 1}, {0, 2}};
  CHECK_THROWS_AS(select_model(white, small, FamilySet{kRow}, ScoreKind::bic),
                  InsufficientDataError);
  CHECK(select_model(white, small, FamilySet::all(), ScoreKind::bic).fit.family == kIid);
}

TEST_CASE("bic and aic") {
  CHECK(bic(-10, 2, 6) == doctest::Approx(2 * std::log(6.0) + 20));
  CHECK(aic(-10, 2) == doctest::Approx(24));
  CHECK_THROWS_AS(bic(-10, 0, 6), ParamError);
  CHECK_THROWS_AS(aic(-10, 0), ParamError);
  for (double ll = -50; ll < 50; ll += 7.5) {
    CHECK(bic(ll + 1, 3, 40) < bic(ll, 3, 40));
    CHECK(aic(ll + 1, 3) < aic(ll, 3));
  }
}

TEST_CASE("cv_nll") {
  const GridShape g(3, 4);
  const auto y = simulate_values(g, kIid, {1, 2, 0, 0, 0}, 5);
  const TrialGrid t(g, y);
  const auto coords = g.present();

  // Under IID each held-out value is scored by the unconditional density of the fold fit.
  double want = 0;
  for (int f = 0; f < 3; ++f) {
    CoordSet train, test;
    for (const auto& c : coords) (cv_fold(c, g.cols(), 3, 0) == f ? test : train).push_back(c);
    const auto fit = fit_mle(t, train, kIid);
    for (const auto& c : test) {
      const double z = (t.value(c) - fit.params.mu);
      want += 0.5 * kLn2Pi + 0.5 * std::log(fit.params.sigma2) + 0.5 * z * z / fit.params.sigma2;
    }
  }
  CHECK(cv_nll(t, coords, kIid, 3, 0) == doctest::Approx(want).epsilon(1e-12));

  const std::vector<PlotCoord> two{{0, 0}, {0, 1}};
  CHECK_THROWS_AS(cv_nll(t, two, kIid, 2, 0), InsufficientDataError);

  const GridShape g8(8, 8);
  const TrialGrid t8(g8, simulate_values(g8, kRowCol, {0, 1, 0.5, 0.5, 0}, 77));
  const double a = cv_nll(t8, g8.present(), kRowCol, 5, 3);
  const double b = cv_nll(t8, g8.present(), kRowCol, 5, 3);
  CHECK(a == b);
}

TEST_CASE("conditional_nll matches the Schur complement oracle") {
  const GridShape g(3, 3);
  const auto y = simulate_values(g, kRowCol, {0, 1, 0.5, 0.5, 0}, 9);
  const TrialGrid t(g, y);
  const std::vector<PlotCoord> train{{0, 0}, {0, 1}, {1, 0}, {2, 2}}, test{{1, 1}, {2, 1}};
  const GrfParams p{0.2, 1.4, 0.5, 0.3, 0};
  // log p(test | train) = log p(all) - log p(train).
  std::vector<PlotCoord> all = train;
  all.insert(all.end(), test.begin(), test.end());
  const long double joint = oracle_mvn(all, t.gather(all), 0.2, 1.4, 0.5, 0.3, 0);
  const long double marg = oracle_mvn(train, t.gather(train), 0.2, 1.4, 0.5, 0.3, 0);
  CHECK(conditional_nll(t, train, test, kRowCol, p) ==
        doctest::Approx(static_cast<double>(marg - joint)).epsilon(1e-10));
}

TEST_CASE("bayes_factor") {
  CHECK(bayes_factor(4, 4) == 1.0);
  CHECK(bayes_factor(0, std::log(3.0)) == doctest::Approx(3.0));
  CHECK(bayes_factor(0, std::log(1000.0)) > 100);
  CHECK(bayes_factor(0, 1e6) == kMaxBayesFactor);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-300, 300);
  for (int k = 0; k < 100; ++k) {
    const double a = u(rng), b = u(rng);
    CHECK(bayes_factor(a, b) * bayes_factor(b, a) == doctest::Approx(1.0).epsilon(1e-12));
  }
}
