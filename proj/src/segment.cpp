#include "fieldqc/segment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include <Eigen/Cholesky>

#include "fieldqc/errors.hpp"
#include "fieldqc/model_store.hpp"

namespace fieldqc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool all_at_least(const Partition& part, int min_plots) {
  return std::all_of(part.patches.begin(), part.patches.end(), [&](const Patch& p) {
    return static_cast<int>(p.coords.size()) >= min_plots;
  });
}

/// Merges patch q into p; the merged patch keeps the smaller id.
Partition merged(const Partition& part, int p, int q) {
  Partition out;
  const int keep = std::min(p, q), drop = std::max(p, q);
  const CoordSet coords = merge_coords(part.find(p)->coords, part.find(q)->coords);
  for (const auto& patch : part.patches) {
    if (patch.id == drop) continue;
    out.patches.push_back(patch.id == keep ? Patch{keep, coords} : patch);
  }
  return out;
}

double log_normal(double y, double mu, double var) {
  const double d = y - mu;
  return -0.5 * (std::log(2 * std::numbers::pi * var) + d * d / var);
}

/// Gaussian predictive densities of single plots given the rest of one fitted patch.
class PatchPredictor {
 public:
  PatchPredictor(const TrialGrid& trial, const CoordSet& coords, const FittedModel& model)
      : coords_(coords), model_(model) {
    const auto cov = build_covariance(coords_, model.family, model.params);
    llt_.compute(cov);
    if (llt_.info() != Eigen::Success) throw NumericalError("patch covariance is not positive definite");
    const auto y = trial.gather(coords_);
    resid_ = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())).array() -
             model.params.mu;
    alpha_ = llt_.solve(resid_);
    const Eigen::MatrixXd linv =
        llt_.matrixL().solve(Eigen::MatrixXd::Identity(cov.rows(), cov.cols()));
    precision_diag_ = linv.colwise().squaredNorm().transpose();
  }

  /// Log-density of a member plot's value given the patch's other plots.
  double leave_one_out(PlotCoord x, double y) const {
    const auto it = std::lower_bound(coords_.begin(), coords_.end(), x);
    const auto k = static_cast<Eigen::Index>(it - coords_.begin());
    const double var = 1 / precision_diag_(k);
    return log_normal(y, y - alpha_(k) * var, var);
  }

  /// Log-density of an outside plot's value given every plot of the patch.
  double predict(PlotCoord x, double y) const {
    const auto& p = model_.params;
    const double rr = model_.family.has_row() ? p.rho_r : 0.0;
    const double rc = model_.family.has_col() ? p.rho_c : 0.0;
    const double w = p.sigma2 * (1 - (model_.family.nugget ? p.phi : 0.0));
    Eigen::VectorXd c(static_cast<Eigen::Index>(coords_.size()));
    for (std::size_t a = 0; a < coords_.size(); ++a)
      c(static_cast<Eigen::Index>(a)) =
          w * std::pow(rr, std::abs(coords_[a].i - x.i)) * std::pow(rc, std::abs(coords_[a].j - x.j));
    const double var = std::max(p.sigma2 - llt_.matrixL().solve(c).squaredNorm(), 1e-12 * p.sigma2);
    return log_normal(y, p.mu + c.dot(alpha_), var);
  }

 private:
  CoordSet coords_;
  FittedModel model_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd resid_, alpha_, precision_diag_;
};

}  // namespace

double PatchModelSet::total_score() const {
  double s = 0;
  for (const auto& p : partition.patches) {
    const auto it = models.find(p.id);
    if (it == models.end()) return kInf;
    s += it->second.score;
  }
  return s;
}

std::string to_string(IdentifyKind k) {
  return k == IdentifyKind::top_down ? "top_down" : "bottom_up";
}

IdentifyKind parse_identify_kind(const std::string& s) {
  if (s == "top_down") return IdentifyKind::top_down;
  if (s == "bottom_up") return IdentifyKind::bottom_up;
  throw ConfigError("unknown identification '" + s + "'");
}

void PipelineConfig::validate() const {
  if (candidates.empty()) throw ConfigError("empty candidate family set");
  if (min_plots_local < 1 || min_plots_global < 1) throw ConfigError("minimum plots must be positive");
  if (max_cycle_iterations < 1) throw ConfigError("max_cycle_iterations must be positive");
  if (max_switches < 0) throw ConfigError("max_switches must be non-negative");
  if (split.min_plots < 2) throw ConfigError("tree min_plots must be at least 2");
  if (cv.folds < 2) throw ConfigError("cross-validation needs at least two folds");
}

PatchModelSet fit_patches(ModelStore& store, const Partition& part, const PipelineConfig& config) {
  PatchModelSet out;
  out.partition = part;
  for (const auto& p : part.patches)
    if (auto m = store.try_select(p.coords, config.candidates, config.score)) out.models[p.id] = *m;
  return out;
}

PatchModelSet identify_top_down(ModelStore& store, const IndexTree& tree,
                                const PipelineConfig& config) {
  Partition part;
  std::vector<int> stack{tree.root};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    const auto& vx = tree.vertex(v);
    bool split = false;
    if (!vx.leaf()) {
      const auto own = store.try_select(vx.coords, config.candidates, config.score);
      double sum = 0;
      for (int c : vx.children) {
        const auto m = store.try_select(tree.vertex(c).coords, config.candidates, config.score);
        sum += m ? m->score : kInf;
      }
      split = own && sum < own->score;
    }
    if (split) {
      for (auto it = vx.children.rbegin(); it != vx.children.rend(); ++it) stack.push_back(*it);
    } else {
      part.patches.push_back({static_cast<int>(part.patches.size()), vx.coords});
    }
  }
  return fit_patches(store, part, config);
}

PatchModelSet identify_bottom_up(ModelStore& store, const IndexTree& tree,
                                 const PipelineConfig& config) {
  // Children always carry larger ids than their parent, so a reverse sweep sees every
  // sibling group before the group's parent.
  std::vector<char> collapsed(tree.size(), 0);
  std::vector<double> score(tree.size(), kInf);
  auto vertex_score = [&](int v) {
    const auto m = store.try_select(tree.vertex(v).coords, config.candidates, config.score);
    return m ? m->score : kInf;
  };
  for (int v = static_cast<int>(tree.size()) - 1; v >= 0; --v) {
    const auto& vx = tree.vertices[v];
    if (vx.leaf()) {
      collapsed[v] = 1;
      score[v] = vertex_score(v);
      continue;
    }
    if (!std::all_of(vx.children.begin(), vx.children.end(), [&](int c) { return collapsed[c]; }))
      continue;
    double sum = 0;
    for (int c : vx.children) sum += score[c];
    const double own = vertex_score(v);
    if (own <= sum) {
      collapsed[v] = 1;
      score[v] = own;
    }
  }
  Partition part;
  std::vector<int> stack{tree.root};
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    const auto& vx = tree.vertices[v];
    if (collapsed[v]) {
      part.patches.push_back({static_cast<int>(part.patches.size()), vx.coords});
      continue;
    }
    for (auto it = vx.children.rbegin(); it != vx.children.rend(); ++it) stack.push_back(*it);
  }
  return fit_patches(store, part, config);
}

PatchModelSet identify(ModelStore& store, const IndexTree& tree, const PipelineConfig& config) {
  return config.identify == IdentifyKind::top_down ? identify_top_down(store, tree, config)
                                                   : identify_bottom_up(store, tree, config);
}

std::vector<MergeCandidate> authentication_posteriors(ModelStore& store, const PatchModelSet& pms,
                                                      AuthMode mode, const PipelineConfig& config) {
  const auto& trial = store.trial();
  const auto& patches = pms.partition.patches;
  std::vector<MergeCandidate> out;
  for (const auto& p : patches) {
    std::vector<MergeCandidate> row;
    for (const auto& q : patches) {
      if (q.id == p.id) continue;
      if (mode == AuthMode::local &&
          !patches_adjacent(p.coords, q.coords, trial.shape(), config.adjacency))
        continue;
      const auto joint =
          store.try_select(merge_coords(p.coords, q.coords), config.candidates, config.score);
      if (!joint) continue;
      double ld;
      try {
        ld = log_likelihood(trial, p.coords, joint->fit.family, joint->fit.params);
      } catch (const NumericalError&) {
        continue;
      }
      if (!std::isfinite(ld)) continue;
      row.push_back({p.id, q.id, 0, ld});
    }
    if (row.empty()) continue;
    double top = -kInf;
    for (const auto& c : row) top = std::max(top, c.log_density);
    double z = 0;
    for (auto& c : row) z += (c.posterior = std::exp(c.log_density - top));
    for (auto& c : row) c.posterior /= z;
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

namespace {

/// Highest posterior; ties go to the larger log-density, then to the first pair found.
const MergeCandidate* best_merge(const std::vector<MergeCandidate>& cands) {
  const MergeCandidate* best = nullptr;
  for (const auto& c : cands)
    if (!best || c.posterior > best->posterior ||
        (c.posterior == best->posterior && c.log_density > best->log_density))
      best = &c;
  return best;
}

}  // namespace

PatchModelSet authenticate(ModelStore& store, const PatchModelSet& pms, AuthMode mode,
                           const PipelineConfig& config) {
  const int min_plots = mode == AuthMode::local ? config.min_plots_local : config.min_plots_global;
  PatchModelSet current = pms;
  PatchModelSet best = pms;
  double best_score = all_at_least(pms.partition, min_plots) ? pms.total_score() : kInf;
  while (current.size() > 1) {
    const auto cands = authentication_posteriors(store, current, mode, config);
    const auto* pick = best_merge(cands);
    if (!pick) break;
    current = fit_patches(store, merged(current.partition, pick->p, pick->q), config);
    if (!all_at_least(current.partition, min_plots)) continue;
    const double s = current.total_score();
    // Ties favour the more merged partition.
    if (s <= best_score) {
      best_score = s;
      best = current;
    }
  }
  return best;
}

double separation_evidence(ModelStore& store, const CoordSet& p, const CoordSet& q,
                           const PipelineConfig& config) {
  const auto sp = store.try_select(p, config.candidates, ScoreKind::cv_nll);
  const auto sq = store.try_select(q, config.candidates, ScoreKind::cv_nll);
  const auto sm = store.try_select(merge_coords(p, q), config.candidates, ScoreKind::cv_nll);
  if (!sm) return kMaxBayesFactor;
  if (!sp || !sq) return 1.0 / kMaxBayesFactor;
  return bayes_factor(sp->score + sq->score, sm->score);
}

FinalAuthentication authenticate_final(ModelStore& store, const PatchModelSet& pms,
                                       EvidenceThreshold threshold, const PipelineConfig& config) {
  const auto levels = EvidenceThreshold::all();
  const double max_cutoff = levels.back().cutoff();
  // One merge sequence serves every cutoff: the result for a cutoff is the first state
  // whose next merge is opposed by at least that much evidence.
  std::vector<PatchModelSet> states{pms};
  std::vector<double> evidence;
  std::vector<char> eligible;
  while (states.back().size() > 1) {
    const auto& cur = states.back();
    const auto cands = authentication_posteriors(store, cur, AuthMode::global, config);
    const auto* pick = best_merge(cands);
    if (!pick) break;
    const double bf = separation_evidence(store, cur.partition.find(pick->p)->coords,
                                          cur.partition.find(pick->q)->coords, config);
    const bool ok = all_at_least(cur.partition, config.min_plots_global);
    evidence.push_back(bf);
    eligible.push_back(ok);
    if (ok && bf >= max_cutoff) break;
    states.push_back(fit_patches(store, merged(cur.partition, pick->p, pick->q), config));
  }
  auto stop_at = [&](double cutoff) {
    for (std::size_t k = 0; k < evidence.size(); ++k)
      if (eligible[k] && evidence[k] >= cutoff) return k;
    return states.size() - 1;
  };
  FinalAuthentication out;
  out.result = states[stop_at(threshold.cutoff())];
  for (const auto& t : levels) out.counts.push_back(static_cast<int>(states[stop_at(t.cutoff())].size()));
  return out;
}

std::vector<SwitchCandidate> switch_posteriors(const TrialGrid& trial, const Partition& part,
                                               const std::map<int, FittedModel>& models,
                                               AdjacencyKind adjacency) {
  std::vector<SwitchCandidate> out;
  if (part.size() < 2) return out;
  const auto& shape = trial.shape();
  const auto border = border_plots(part, shape, adjacency);
  std::map<int, PatchPredictor> predictors;
  for (const auto& patch : part.patches)
    if (const auto m = models.find(patch.id); m != models.end())
      predictors.try_emplace(patch.id, trial, patch.coords, m->second);
  std::size_t k = 0;
  while (k < border.size()) {
    const PlotCoord x = border[k].plot;
    const int p = border[k].own_patch;
    const double yx = trial.value(x);
    const auto pp = predictors.find(p);
    const double stay = pp == predictors.end() ? kInf : pp->second.leave_one_out(x, yx);
    std::vector<std::pair<int, double>> logits;
    for (; k < border.size() && border[k].plot == x; ++k) {
      const int q = border[k].neighbor_patch;
      if (!logits.empty() && logits.back().first == q) continue;
      const auto pq = predictors.find(q);
      if (!std::isfinite(stay) || pq == predictors.end()) continue;
      logits.emplace_back(q, pq->second.predict(x, yx) - stay);
    }
    if (logits.empty()) continue;
    double top = 0;
    for (const auto& [q, g] : logits) top = std::max(top, g);
    double z = std::exp(-top);
    for (const auto& [q, g] : logits) z += std::exp(g - top);
    for (const auto& [q, g] : logits)
      out.push_back({x, p, q, std::exp(g - top) / z, std::exp(-top) / z});
  }
  return out;
}

PatchModelSet verify(ModelStore& store, const PatchModelSet& pms, VerifyStage stage,
                     const PipelineConfig& config) {
  const auto& trial = store.trial();
  const auto& shape = trial.shape();
  const int min_plots = stage == VerifyStage::cycle1 ? config.min_plots_local
                                                     : config.min_plots_global;
  Partition part = pms.partition;
  std::map<int, FittedModel> models;
  for (const auto& [id, m] : pms.models) models[id] = m.fit;
  const bool fitted = models.size() == part.size();
  if (part.size() < 2 || !fitted) return fit_patches(store, part, config);

  const int cap = config.max_switches > 0 ? config.max_switches
                                          : 2 * static_cast<int>(shape.size());
  // Only the plots on the borders found at the start are rechallenged.
  std::set<PlotCoord> rechallenged;
  for (const auto& e : border_plots(part, shape, config.adjacency)) rechallenged.insert(e.plot);
  std::set<std::vector<int>> seen{part.labels(shape)};
  for (int it = 0; it < cap; ++it) {
    auto cands = switch_posteriors(trial, part, models, config.adjacency);
    std::erase_if(cands, [&](const SwitchCandidate& c) {
      return !(c.posterior > c.stay_posterior) || !rechallenged.contains(c.plot);
    });
    std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
      return a.posterior > b.posterior;
    });
    bool applied = false;
    for (const auto& c : cands) {
      Patch* from = part.find(c.from);
      Patch* to = part.find(c.to);
      CoordSet new_from = subtract_coords(from->coords, {c.plot});
      if (new_from.empty()) continue;
      const auto around = neighbors(c.plot, shape, config.adjacency);
      bool small = false;
      for (const auto& comp : connected_components({c.from, new_from}, shape, config.adjacency)) {
        const bool touched = std::any_of(around.begin(), around.end(), [&](PlotCoord u) {
          return std::binary_search(comp.coords.begin(), comp.coords.end(), u);
        });
        if (touched && static_cast<int>(comp.coords.size()) < min_plots) small = true;
      }
      if (small) continue;
      CoordSet new_to = merge_coords(to->coords, {c.plot});
      FittedModel fa, fb;
      try {
        fa = store.fit(new_from, models.at(c.from).family);
        fb = store.fit(new_to, models.at(c.to).family);
      } catch (const Error&) {
        continue;
      }
      from->coords = std::move(new_from);
      to->coords = std::move(new_to);
      models[c.from] = fa;
      models[c.to] = fb;
      applied = true;
      break;
    }
    if (!applied) break;
    if (!seen.insert(part.labels(shape)).second) break;
  }
  return fit_patches(store, part, config);
}

IndexTree build_tree(ModelStore& store, const PipelineConfig& config) {
  if (config.tree == TreeKind::quad) return build_quad_tree(store.trial().shape(), config.split);
  return build_binary_tree(store, config.tree_score, config.candidates, config.split);
}

const StageSnapshot& QcReport::stage(const std::string& name) const {
  for (const auto& s : stages)
    if (s.name == name) return s;
  throw Error("no stage '" + name + "' in report");
}

QcReport detect(const TrialGrid& trial, const PipelineConfig& config) {
  ModelStore store(trial, config.cv);
  return detect(store, config);
}

QcReport detect(ModelStore& store, const PipelineConfig& config, const IndexTree* prebuilt_tree) {
  config.validate();
  const auto& trial = store.trial();
  const int need = std::max(2 * config.min_plots_local, config.min_plots_global);
  if (static_cast<int>(trial.shape().size()) < need)
    throw InsufficientDataError("trial has " + std::to_string(trial.shape().size()) +
                                " plots, detection needs at least " + std::to_string(need));
  QcReport report;
  report.trial = trial;
  report.config = config;
  auto snapshot = [&](std::string name, const PatchModelSet& pms) {
    report.stages.push_back({std::move(name), pms, pms.total_score()});
  };

  std::optional<IndexTree> own_tree;
  if (!prebuilt_tree) own_tree = build_tree(store, config);
  const IndexTree& tree = prebuilt_tree ? *prebuilt_tree : *own_tree;

  PatchModelSet pms = identify(store, tree, config);
  snapshot("identified", pms);

  for (int it = 0; it < config.max_cycle_iterations; ++it) {
    auto next = authenticate(store, pms, AuthMode::local, config);
    next = verify(store, next, VerifyStage::cycle1, config);
    const bool done = same_partition(next.partition, pms.partition);
    pms = std::move(next);
    if (done) break;
  }
  snapshot("cycle1", pms);

  for (int it = 0; it < config.max_cycle_iterations; ++it) {
    auto next = authenticate(store, pms, AuthMode::local, config);
    next = authenticate(store, next, AuthMode::global, config);
    next = verify(store, next, VerifyStage::cycle2, config);
    const bool done = same_partition(next.partition, pms.partition);
    pms = std::move(next);
    if (done) break;
  }
  snapshot("cycle2", pms);

  pms = authenticate(store, pms, AuthMode::local, config);
  auto fin = authenticate_final(store, pms, config.threshold, config);
  report.threshold_counts = fin.counts;
  pms = verify(store, fin.result, VerifyStage::cycle2, config);
  snapshot("final", pms);

  report.patches = static_cast<int>(pms.size());
  report.flagged = report.patches > 1;
  double nll_parts = 0;
  bool ok = true;
  for (const auto& p : pms.partition.patches) {
    const auto s = store.try_select(p.coords, config.candidates, ScoreKind::cv_nll);
    if (!s) {
      ok = false;
      break;
    }
    nll_parts += s->score;
  }
  const auto single =
      store.try_select(trial.shape().present(), config.candidates, ScoreKind::cv_nll);
  report.evidence = ok && single ? bayes_factor(nll_parts, single->score) : 1.0;
  return report;
}

}  // namespace fieldqc
