#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

namespace fieldqc::grf {

struct SimplexResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
};

/// Nelder-Mead minimisation inside the box [lo, hi]; trial points are projected onto the box.
/// Stops when every vertex lies within `xtol` (max norm) of the best one, or after `max_evals`.
template <class Objective>
SimplexResult nelder_mead(Objective&& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& lo,
                          const Eigen::VectorXd& hi, double step, double xtol, int max_evals) {
  const Eigen::Index d = x0.size();
  SimplexResult res;
  auto clamp = [&](Eigen::VectorXd x) {
    return x.cwiseMax(lo).cwiseMin(hi).eval();
  };
  auto eval = [&](const Eigen::VectorXd& x) {
    ++res.evaluations;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Eigen::VectorXd> pts;
  std::vector<double> vals;
  pts.push_back(clamp(x0));
  vals.push_back(eval(pts[0]));
  for (Eigen::Index k = 0; k < d; ++k) {
    Eigen::VectorXd x = pts[0];
    x[k] += (x[k] + step <= hi[k]) ? step : -step;
    pts.push_back(clamp(x));
    vals.push_back(eval(pts.back()));
  }

  std::vector<int> order(d + 1);
  while (true) {
    for (int k = 0; k <= d; ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return vals[a] < vals[b]; });
    const int best = order.front();
    const int worst = order.back();
    const int second = order[d - 1 >= 0 ? d - 1 : 0];

    double spread = 0;
    for (int k = 0; k <= d; ++k) spread = std::max(spread, (pts[k] - pts[best]).cwiseAbs().maxCoeff());
    if (spread <= xtol || res.evaluations >= max_evals) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
    for (int k = 0; k <= d; ++k)
      if (k != worst) centroid += pts[k];
    centroid /= static_cast<double>(d);

    const Eigen::VectorXd xr = clamp(centroid + (centroid - pts[worst]));
    const double fr = eval(xr);
    if (fr < vals[best]) {
      const Eigen::VectorXd xe = clamp(centroid + 2.0 * (centroid - pts[worst]));
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    const Eigen::VectorXd xc = outside ? clamp(centroid + 0.5 * (xr - centroid))
                                       : clamp(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = eval(xc);
    if (fc < (outside ? fr : vals[worst])) {
      pts[worst] = xc;
      vals[worst] = fc;
      continue;
    }
    for (int k = 0; k <= d; ++k) {
      if (k == best) continue;
      pts[k] = clamp(pts[best] + 0.5 * (pts[k] - pts[best]));
      vals[k] = eval(pts[k]);
    }
  }
  const auto it = std::min_element(vals.begin(), vals.end());
  res.x = pts[static_cast<std::size_t>(it - vals.begin())];
  res.value = *it;
  return res;
}

}  // namespace fieldqc::grf
