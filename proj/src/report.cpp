#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include <json.hpp>

#include "fieldqc/errors.hpp"
#include "fieldqc/segment.hpp"

namespace fieldqc {

namespace {

using nlohmann::json;

json runs_json(const CoordSet& coords) {
  json runs = json::array();
  for (const auto& [i, a, b] : to_runs(coords)) runs.push_back({i, a, b});
  return runs;
}

/// JSON has no infinity; unfittable scores are written as null.
json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json patches_json(const PatchModelSet& pms) {
  json out = json::array();
  for (const auto& p : pms.partition.patches) {
    json j;
    j["id"] = p.id;
    j["plots"] = p.coords.size();
    j["runs"] = runs_json(p.coords);
    if (const auto it = pms.models.find(p.id); it != pms.models.end()) {
      const auto& m = it->second;
      j["family"] = m.fit.family.name();
      j["params"] = {{"mu", m.fit.params.mu},
                     {"sigma2", m.fit.params.sigma2},
                     {"rho_r", m.fit.params.rho_r},
                     {"rho_c", m.fit.params.rho_c},
                     {"phi", m.fit.params.phi}};
      j["loglik"] = m.fit.loglik;
      j["k"] = m.fit.k;
      j["score"] = number(m.score);
    } else {
      j["family"] = nullptr;
    }
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace

void write_report_json(std::ostream& out, const QcReport& r) {
  json doc;
  doc["trial"] = r.trial.name();
  const auto& shape = r.trial.shape();
  json values = json::array();
  for (int i = 0; i < shape.rows(); ++i)
    for (int j = 0; j < shape.cols(); ++j)
      values.push_back(shape.contains({i, j}) ? json(r.trial.value({i, j})) : json(nullptr));
  doc["grid"] = {{"rows", shape.rows()}, {"cols", shape.cols()}, {"values", std::move(values)}};
  const auto& c = r.config;
  doc["config"] = {{"tree", to_string(c.tree)},
                   {"identify", to_string(c.identify)},
                   {"score", to_string(c.score)},
                   {"tree_score", to_string(c.tree_score)},
                   {"families", c.candidates.to_string()},
                   {"adjacency", to_string(c.adjacency)},
                   {"threshold", c.threshold.name()},
                   {"folds", c.cv.folds},
                   {"seed", c.cv.seed}};
  json stages = json::array();
  for (const auto& s : r.stages)
    stages.push_back({{"name", s.name},
                      {"patch_count", s.patches.size()},
                      {"score", number(s.score)},
                      {"patches", patches_json(s.patches)}});
  doc["stages"] = std::move(stages);
  doc["patches"] = r.patches;
  doc["flagged"] = r.flagged;
  doc["evidence"] = r.evidence;
  json sweep = json::object();
  const auto levels = EvidenceThreshold::all();
  for (std::size_t k = 0; k < r.threshold_counts.size() && k < levels.size(); ++k)
    sweep[levels[k].name()] = r.threshold_counts[k];
  doc["threshold_counts"] = std::move(sweep);
  out << doc.dump(1) << '\n';
}

ReportView read_report(std::istream& in) {
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(std::string("report: ") + e.what(), 0);
  }
  try {
    ReportView view;
    const auto& grid = doc.at("grid");
    const int rows = grid.at("rows"), cols = grid.at("cols");
    const auto& vals = grid.at("values");
    if (rows < 1 || cols < 1 || vals.size() != static_cast<std::size_t>(rows) * cols)
      throw ParseError("report grid does not match its extent", 0);
    CoordSet present;
    std::vector<double> dense(vals.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t k = 0; k < vals.size(); ++k) {
      if (vals[k].is_null()) continue;
      dense[k] = vals[k].get<double>();
      present.push_back({static_cast<int>(k) / cols, static_cast<int>(k) % cols});
    }
    view.trial = TrialGrid(GridShape(rows, cols, std::move(present)), std::move(dense),
                           doc.value("trial", std::string()));
    const auto& stages = doc.at("stages");
    if (stages.empty()) throw ParseError("report has no stages", 0);
    for (const auto& p : stages.back().at("patches")) {
      std::vector<std::tuple<int, int, int>> runs;
      for (const auto& r : p.at("runs")) runs.emplace_back(r.at(0), r.at(1), r.at(2));
      view.final_partition.patches.push_back({p.at("id").get<int>(), from_runs(runs)});
    }
    view.final_partition.validate(view.trial.shape());
    view.patches = static_cast<int>(view.final_partition.size());
    return view;
  } catch (const json::exception& e) {
    throw ParseError(std::string("report: ") + e.what(), 0);
  }
}

}  // namespace fieldqc
