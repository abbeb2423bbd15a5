#include "fieldqc/analysis.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "fieldqc/errors.hpp"
#include "fieldqc/grf/covariance.hpp"

namespace fieldqc {

DesignMatrix DesignMatrix::intercept(const GridShape& shape) {
  DesignMatrix d;
  d.plots = shape.present();
  d.x = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(d.plots.size()), 1);
  d.labels = {"intercept"};
  return d;
}

DesignMatrix reduce_rank(DesignMatrix d) {
  if (d.x.cols() == 0 || d.x.rows() == 0) throw DesignError("empty design");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.x);
  const auto rank = qr.rank();
  if (rank == 0) throw DesignError("design has rank zero");
  if (rank >= d.x.rows()) throw DesignError("design leaves no residual degrees of freedom");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < rank; ++k) keep.push_back(qr.colsPermutation().indices()(k));
  std::sort(keep.begin(), keep.end());
  DesignMatrix out;
  out.plots = std::move(d.plots);
  out.x.resize(d.x.rows(), rank);
  for (Eigen::Index k = 0; k < rank; ++k) {
    out.x.col(k) = d.x.col(keep[k]);
    out.labels.push_back(d.labels[keep[k]]);
  }
  out.dropped = d.dropped;
  for (Eigen::Index k = 0; k < d.x.cols(); ++k)
    if (!std::binary_search(keep.begin(), keep.end(), k)) out.dropped.push_back(d.labels[k]);
  return out;
}

DesignMatrix parse_design(std::istream& in, const GridShape& shape) {
  std::string line;
  int lineno = 0;
  auto next_line = [&] {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty() && line[0] != '#') return true;
    }
    return false;
  };
  if (!next_line()) throw ParseError("empty design file", lineno);
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    for (std::string f; std::getline(h, f, ',');) header.push_back(f);
  }
  const bool variety = header.size() == 4 && header[3] == "variety";
  if (header.size() < 3 || header[0] != "row" || header[1] != "col" || header[2] != "block" ||
      (header.size() == 4 && !variety) || header.size() > 4)
    throw ParseError("design header must be row,col,block[,variety]", lineno);

  std::map<PlotCoord, std::pair<std::string, std::string>> levels;
  while (next_line()) {
    std::vector<std::string> f;
    std::istringstream s(line);
    for (std::string x; std::getline(s, x, ',');) f.push_back(x);
    if (f.size() != header.size()) throw ParseError("wrong number of fields", lineno);
    PlotCoord c;
    try {
      std::size_t used = 0;
      c.i = std::stoi(f[0], &used);
      if (used != f[0].size()) throw std::invalid_argument("row");
      c.j = std::stoi(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument("col");
    } catch (const std::exception&) {
      throw ParseError("row and col must be integers", lineno);
    }
    if (!shape.contains(c)) throw InvalidCoordError("design plot not present in the trial");
    if (!levels.emplace(c, std::pair{f[2], variety ? f[3] : std::string()}).second)
      throw DuplicatePlotError("plot listed twice in design (line " + std::to_string(lineno) + ")");
  }
  if (levels.size() != shape.size())
    throw DesignError("design does not list every present plot of the trial");

  auto level_index = [&](bool second) {
    std::map<std::string, int> idx;
    for (const auto& [c, l] : levels) idx.emplace(second ? l.second : l.first, 0);
    int k = 0;
    for (auto& [name, v] : idx) v = k++;
    return idx;
  };
  const auto blocks = level_index(false);
  const auto varieties = variety ? level_index(true) : std::map<std::string, int>{};
  DesignMatrix d;
  d.plots = shape.present();
  const auto n = static_cast<Eigen::Index>(d.plots.size());
  const auto p = static_cast<Eigen::Index>(blocks.size() + (variety ? varieties.size() - 1 : 0));
  d.x = Eigen::MatrixXd::Zero(n, p);
  d.x.col(0).setOnes();
  d.labels = {"intercept"};
  for (const auto& [name, k] : blocks)
    if (k > 0) d.labels.push_back("block:" + name);
  for (const auto& [name, k] : varieties)
    if (k > 0) d.labels.push_back("variety:" + name);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& [b, v] = levels.at(d.plots[r]);
    if (const int k = blocks.at(b); k > 0) d.x(r, k) = 1;
    if (variety)
      if (const int k = varieties.at(v); k > 0)
        d.x(r, static_cast<Eigen::Index>(blocks.size()) + k - 1) = 1;
  }
  return reduce_rank(std::move(d));
}

DesignMatrix parse_design_file(const std::string& path, const GridShape& shape) {
  std::ifstream in(path);
  if (!in) throw DesignError("cannot open design file " + path);
  return parse_design(in, shape);
}

Eigen::VectorXd gls_beta(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                         const Eigen::MatrixXd& cov) {
  const auto llt = grf::factorize<double>(cov);
  const Eigen::MatrixXd wx = llt.matrixL().solve(x);
  const Eigen::VectorXd wy = llt.matrixL().solve(y);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(wx);
  if (qr.rank() < x.cols()) throw DesignError("design is rank deficient under the fitted covariance");
  return qr.solve(wy);
}

FirstStageFit gls_fit(const TrialGrid& trial, const DesignMatrix& design,
                      const FamilySet& candidates, ScoreKind score) {
  if (design.plots != trial.shape().present())
    throw ShapeMismatchError("design rows do not match the trial's plots");
  if (candidates.empty()) throw ConfigError("empty candidate family set");
  const auto& plots = design.plots;
  const auto yv = trial.gather(plots);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(yv.data(), yv.size());
  const Eigen::MatrixXd& x = design.x;

  Eigen::VectorXd beta = gls_beta(x, y, Eigen::MatrixXd::Identity(y.size(), y.size()));
  const double scale = std::max(1.0, beta.cwiseAbs().maxCoeff());
  FirstStageFit out;
  out.labels = design.labels;
  constexpr int kMaxRounds = 50;
  bool converged = false;
  auto residual_trial = [&](const Eigen::VectorXd& r) {
    std::vector<double> dense(trial.dense().size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t k = 0; k < plots.size(); ++k) dense[trial.shape().index(plots[k])] = r(k);
    return trial.with_values(std::move(dense));
  };

  for (int round = 1; round <= kMaxRounds && !converged; ++round) {
    const Eigen::VectorXd r = y - x * beta;
    if (r.cwiseAbs().maxCoeff() <= 1e-12 * scale) {
      // The mean model is exact; there is no covariance left to fit.
      out.grf = FittedModel{GrfFamily{}, GrfParams{0, 1, 0, 0, 0}, 0, static_cast<int>(y.size()),
                            2};
      out.rounds = round;
      converged = true;
      break;
    }
    const TrialGrid rt = residual_trial(r);
    out.grf = select_model(rt, plots, candidates, score).fit;
    GrfParams cov_params = out.grf.params;
    const Eigen::MatrixXd cov = grf::build_covariance<double>(plots, out.grf.family, cov_params);
    const Eigen::VectorXd next = gls_beta(x, y, cov);
    const double change = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    out.rounds = round;
    converged = change < 1e-8;
  }
  if (!converged) throw ConvergenceError("GLS alternation did not converge in 50 rounds");

  out.beta = beta;
  const Eigen::VectorXd marg = y - x * beta;
  Eigen::VectorXd cond = marg;
  if (out.grf.family.correlated()) {
    // Subtracting the predicted correlated component leaves phi * sigma2 * S^-1 e.
    const Eigen::MatrixXd cov = grf::build_covariance<double>(plots, out.grf.family, out.grf.params);
    const auto llt = grf::factorize<double>(cov);
    const double nugget = out.grf.family.nugget ? out.grf.params.phi : 0.0;
    cond = nugget * out.grf.params.sigma2 * llt.solve(marg);
  }
  out.marginal = residual_trial(marg);
  out.conditional = residual_trial(cond);
  return out;
}

FirstStageFit gls_fit(const TrialGrid& trial, const DesignMatrix& design, GrfFamily family) {
  if (!family.valid()) throw ParamError("nugget requires a correlated family");
  return gls_fit(trial, design, FamilySet{family}, ScoreKind::bic);
}

}  // namespace fieldqc
