#include "fieldqc/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fieldqc/errors.hpp"
#include "fieldqc/grf/covariance.hpp"
#include "fieldqc/model_store.hpp"

namespace fieldqc {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr int kMinTruePlots = 8;

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t index) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char ch : tag) h = (h ^ ch) * 1099511628211ULL;
  return splitmix64(splitmix64(root ^ h) + index);
}

double Distribution::sample(Rng& rng) const {
  switch (kind) {
    case Kind::point: return a;
    case Kind::normal: return std::normal_distribution<double>(a, b)(rng);
    case Kind::lognormal: return std::lognormal_distribution<double>(a, b)(rng);
    case Kind::uniform: return std::uniform_real_distribution<double>(a, b)(rng);
    case Kind::beta: {
      const double x = std::gamma_distribution<double>(a, 1.0)(rng);
      const double y = std::gamma_distribution<double>(b, 1.0)(rng);
      return scale * x / (x + y);
    }
  }
  return a;
}

std::pair<double, double> Distribution::support() const {
  constexpr double inf = std::numeric_limits<double>::infinity();
  switch (kind) {
    case Kind::point: return {a, a};
    case Kind::normal: return {-inf, inf};
    case Kind::lognormal: return {0, inf};
    case Kind::uniform: return {a, b};
    case Kind::beta: return {0, scale};
  }
  return {a, a};
}

namespace {

void check_support(const Distribution& d, const char* name, double lo, double hi, bool open_lo) {
  if ((d.kind == Distribution::Kind::normal || d.kind == Distribution::Kind::lognormal) && !(d.b > 0))
    throw ConfigError(std::string(name) + ": spread must be positive");
  if (d.kind == Distribution::Kind::beta && !(d.a > 0 && d.b > 0 && d.scale > 0))
    throw ConfigError(std::string(name) + ": beta shapes and scale must be positive");
  if (d.kind == Distribution::Kind::uniform && !(d.a < d.b))
    throw ConfigError(std::string(name) + ": uniform needs lower < upper");
  const auto [s0, s1] = d.support();
  const bool low_ok = open_lo ? s0 > lo || (s0 == lo && d.kind != Distribution::Kind::point) : s0 >= lo;
  if (!low_ok || s1 > hi)
    throw ConfigError(std::string(name) + ": prior support leaves the parameter range");
}

}  // namespace

void PatchPrior::validate() const {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const auto [m0, m1] = mu.support();
  if (!std::isfinite(mu.a) || (mu.kind == Distribution::Kind::point && !std::isfinite(m0 + m1)))
    throw ConfigError("mu: invalid prior");
  check_support(sigma, "sigma", 0, inf, true);
  check_support(rho_r, "rho_r", 0, kRhoMax, false);
  check_support(rho_c, "rho_c", 0, kRhoMax, false);
  check_support(phi, "phi", 0, kPhiMax, false);
  double total = 0;
  for (int k = 0; k < kFamilyCount; ++k) {
    if (families[k] < 0) throw ConfigError("family probabilities must be non-negative");
    total += families[k];
  }
  if (std::abs(total - 1) > 1e-9) throw ConfigError("family probabilities must sum to 1");
}

GrfFamily PatchPrior::sample_family(Rng& rng) const {
  std::discrete_distribution<int> pick(families.begin(), families.end());
  return GrfFamily::from_ordinal(pick(rng));
}

GrfParams PatchPrior::sample_params(GrfFamily family, Rng& rng) const {
  // Every component is drawn so that the stream position does not depend on the family.
  GrfParams p;
  p.mu = mu.sample(rng);
  const double s = sigma.sample(rng);
  p.sigma2 = s * s;
  const double rr = rho_r.sample(rng), rc = rho_c.sample(rng), ph = phi.sample(rng);
  p.rho_r = family.has_row() ? rr : 0.0;
  p.rho_c = family.has_col() ? rc : 0.0;
  p.phi = family.nugget ? ph : 0.0;
  return p;
}

const PatchPrior& PriorConfig::for_patch(int k) const {
  return patches.size() == 1 ? patches.front() : patches.at(static_cast<std::size_t>(k));
}

void PriorConfig::validate() const {
  if (patches.size() != 1 && patches.size() != 2)
    throw ConfigError("priors need one shared entry or one entry per patch");
  for (const auto& p : patches) p.validate();
  if (max_param_retries < 1 || max_geometry_retries < 1)
    throw ConfigError("retry caps must be positive");
  pipeline.validate();
}

namespace {

using nlohmann::json;

Distribution parse_distribution(const json& j, const std::string& key) {
  if (j.is_number()) return Distribution::point(j.get<double>());
  const std::string dist = j.at("dist").get<std::string>();
  if (dist == "point") return Distribution::point(j.at("value").get<double>());
  if (dist == "normal") return Distribution::normal(j.at("mean").get<double>(), j.at("sd").get<double>());
  if (dist == "lognormal")
    return Distribution::lognormal(j.at("meanlog").get<double>(), j.at("sdlog").get<double>());
  if (dist == "uniform") return Distribution::uniform(j.at("lower").get<double>(), j.at("upper").get<double>());
  if (dist == "beta")
    return Distribution::beta(j.at("alpha").get<double>(), j.at("beta").get<double>(),
                              j.value("scale", 1.0));
  throw ConfigError(key + ": unknown distribution '" + dist + "'");
}

void apply_patch_keys(const json& j, PatchPrior& p) {
  if (j.contains("mu")) p.mu = parse_distribution(j["mu"], "mu");
  if (j.contains("sigma")) p.sigma = parse_distribution(j["sigma"], "sigma");
  if (j.contains("rho")) p.rho_r = p.rho_c = parse_distribution(j["rho"], "rho");
  if (j.contains("rho_r")) p.rho_r = parse_distribution(j["rho_r"], "rho_r");
  if (j.contains("rho_c")) p.rho_c = parse_distribution(j["rho_c"], "rho_c");
  if (j.contains("phi")) p.phi = parse_distribution(j["phi"], "phi");
  if (j.contains("families")) {
    p.families.fill(0);
    for (const auto& [name, prob] : j["families"].items())
      p.families[GrfFamily::parse(name).ordinal()] = prob.get<double>();
  }
}

}  // namespace

PriorConfig PriorConfig::parse(std::istream& in) {
  PriorConfig cfg;
  try {
    const json j = json::parse(in);
    PatchPrior shared;
    apply_patch_keys(j, shared);
    cfg.patches = {shared};
    if (j.contains("per_patch")) {
      cfg.patches.clear();
      for (const auto& pj : j["per_patch"]) {
        PatchPrior p = shared;
        apply_patch_keys(pj, p);
        cfg.patches.push_back(p);
      }
    }
    cfg.max_param_retries = j.value("max_param_retries", cfg.max_param_retries);
    cfg.max_geometry_retries = j.value("max_geometry_retries", cfg.max_geometry_retries);
    if (j.contains("min_evidence"))
      cfg.min_evidence = EvidenceThreshold::parse(j["min_evidence"].get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("priors: ") + e.what());
  } catch (const ParamError& e) {
    throw ConfigError(std::string("priors: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

PriorConfig PriorConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open priors file " + path);
  return parse(in);
}

Partition lloyd_partition(const GridShape& shape, std::vector<std::array<double, 2>> centroids,
                          int max_iterations) {
  const auto& plots = shape.present();
  const int k = static_cast<int>(centroids.size());
  if (k < 1 || k > static_cast<int>(plots.size()))
    throw ParamError("k must lie between 1 and the plot count");
  auto dist2 = [](PlotCoord c, const std::array<double, 2>& m) {
    const double di = c.i - m[0], dj = c.j - m[1];
    return di * di + dj * dj;
  };
  std::vector<int> label(plots.size(), -1);
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (std::size_t n = 0; n < plots.size(); ++n) {
      int best = 0;
      for (int c = 1; c < k; ++c)
        if (dist2(plots[n], centroids[c]) < dist2(plots[n], centroids[best])) best = c;
      changed |= label[n] != best;
      label[n] = best;
    }
    if (!changed) break;
    std::vector<std::array<double, 2>> sum(k, {0, 0});
    std::vector<int> count(k, 0);
    for (std::size_t n = 0; n < plots.size(); ++n) {
      sum[label[n]][0] += plots[n].i;
      sum[label[n]][1] += plots[n].j;
      ++count[label[n]];
    }
    for (int c = 0; c < k; ++c) {
      if (count[c] > 0) {
        centroids[c] = {sum[c][0] / count[c], sum[c][1] / count[c]};
        continue;
      }
      // Empty cluster: restart it at the plot farthest from its own centroid.
      std::size_t far = 0;
      double worst = -1;
      for (std::size_t n = 0; n < plots.size(); ++n) {
        const double d = dist2(plots[n], centroids[label[n]]);
        if (d > worst) worst = d, far = n;
      }
      centroids[c] = {double(plots[far].i), double(plots[far].j)};
      label[far] = c;
    }
  }
  std::vector<int> dense(static_cast<std::size_t>(shape.rows()) * shape.cols(), -1);
  for (std::size_t n = 0; n < plots.size(); ++n) dense[shape.index(plots[n])] = label[n];
  Partition part = Partition::from_labels(shape, dense);
  std::erase_if(part.patches, [](const Patch& p) { return p.coords.empty(); });
  return part;
}

Partition lloyd_partition(const GridShape& shape, int k, std::uint64_t seed) {
  const auto& plots = shape.present();
  if (k < 1 || k > static_cast<int>(plots.size()))
    throw ParamError("k must lie between 1 and the plot count");
  Rng rng(seed);
  std::vector<std::size_t> idx(plots.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<std::array<double, 2>> centroids;
  for (int c = 0; c < k; ++c) {
    std::uniform_int_distribution<std::size_t> pick(c, idx.size() - 1);
    std::swap(idx[c], idx[pick(rng)]);
    centroids.push_back({double(plots[idx[c]].i), double(plots[idx[c]].j)});
  }
  return lloyd_partition(shape, std::move(centroids));
}

std::vector<double> sample_field(std::span<const PlotCoord> coords, GrfFamily family,
                                 const GrfParams& params, Rng& rng) {
  validate_params(family, params);
  const auto cov = grf::build_covariance<double>(coords, family, params);
  const auto llt = grf::factorize<double>(cov);
  Eigen::VectorXd z(static_cast<Eigen::Index>(coords.size()));
  std::normal_distribution<double> normal;
  for (auto& v : z) v = normal(rng);
  const Eigen::VectorXd y = (llt.matrixL() * z).array() + params.mu;
  return {y.data(), y.data() + y.size()};
}

namespace {

std::optional<Partition> draw_geometry(const GridShape& shape, std::uint64_t seed) {
  Partition three = lloyd_partition(shape, 3, derive_seed(seed, "lloyd"));
  if (three.size() < 3) return std::nullopt;
  Rng rng(derive_seed(seed, "merge-pair"));
  const int pair = std::uniform_int_distribution<int>(0, 2)(rng);
  static constexpr int kPairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  const auto& a = three.patches[kPairs[pair][0]];
  const auto& b = three.patches[kPairs[pair][1]];
  const auto& rest = three.patches[3 - kPairs[pair][0] - kPairs[pair][1]];
  Partition two;
  two.patches.push_back({0, merge_coords(a.coords, b.coords)});
  two.patches.push_back({1, rest.coords});
  two = two.canonical();
  for (const auto& p : two.patches)
    if (static_cast<int>(p.coords.size()) < kMinTruePlots) return std::nullopt;
  return two;
}

}  // namespace

SimTrial simulate_trial(const GridShape& shape, const PriorConfig& priors, std::uint64_t seed) {
  priors.validate();
  if (static_cast<int>(shape.size()) < 2 * kMinTruePlots)
    throw SimulationError("shape has too few plots for two 8-plot patches");
  const auto& pipeline = priors.pipeline;
  constexpr int kGeometryDraws = 200;
  int geometry_draw = 0;
  for (int g = 0; g < priors.max_geometry_retries; ++g) {
    std::optional<Partition> truth;
    while (!truth && geometry_draw < kGeometryDraws)
      truth = draw_geometry(shape, derive_seed(seed, "geometry", geometry_draw++));
    if (!truth) throw SimulationError("no Lloyd geometry with two 8-plot patches");

    for (int r = 0; r < priors.max_param_retries; ++r) {
      Rng rng(derive_seed(seed, "params", static_cast<std::uint64_t>(g) * 1024 + r));
      SimTrial sim;
      sim.seed = seed;
      sim.truth = *truth;
      sim.geometry_retries = g;
      sim.param_retries = r;
      std::vector<double> values(static_cast<std::size_t>(shape.rows()) * shape.cols(),
                                 std::numeric_limits<double>::quiet_NaN());
      for (const auto& patch : sim.truth.patches) {
        const auto& prior = priors.for_patch(patch.id);
        const GrfFamily family = prior.sample_family(rng);
        const GrfParams params = prior.sample_params(family, rng);
        sim.models[patch.id] = {family, params};
        const auto field = sample_field(patch.coords, family, params, rng);
        for (std::size_t n = 0; n < field.size(); ++n) values[shape.index(patch.coords[n])] = field[n];
      }
      sim.trial = TrialGrid(shape, std::move(values));

      ModelStore store(sim.trial, pipeline.cv);
      const auto fitted = fit_patches(store, sim.truth, pipeline);
      if (fitted.models.size() != sim.truth.size()) continue;
      const auto auth = authenticate(store, fitted, AuthMode::global, pipeline);
      if (auth.size() < 2) continue;
      sim.separation_bf = separation_evidence(store, sim.truth.patches[0].coords,
                                              sim.truth.patches[1].coords, pipeline);
      if (sim.separation_bf < priors.min_evidence.cutoff()) continue;
      sim.oracle = verify(store, fitted, VerifyStage::cycle2, pipeline).partition.canonical();
      return sim;
    }
  }
  throw SimulationError("patches indistinguishable after all parameter and geometry retries");
}

std::vector<SimTrial> run_study(const std::vector<GridShape>& shapes, const PriorConfig& priors,
                                int n_trials, std::uint64_t seed, int jobs) {
  if (shapes.empty()) throw ConfigError("no trial shapes given");
  if (n_trials < 1) throw ConfigError("n_trials must be positive");
  priors.validate();
  std::vector<std::optional<SimTrial>> out(static_cast<std::size_t>(n_trials));
  std::vector<std::exception_ptr> errors(out.size());
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int t; (t = next++) < n_trials;) {
      try {
        out[t] = simulate_trial(shapes[t % shapes.size()], priors, derive_seed(seed, "trial", t));
        char name[32];
        std::snprintf(name, sizeof name, "trial_%04d", t);
        out[t]->trial.set_name(name);
      } catch (const SimulationError& e) {
        errors[t] = std::make_exception_ptr(SimulationError(e.what(), t));
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  const int workers = std::clamp(jobs, 1, n_trials);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  std::vector<SimTrial> trials;
  for (std::size_t t = 0; t < out.size(); ++t) {
    if (errors[t]) std::rethrow_exception(errors[t]);
    trials.push_back(std::move(*out[t]));
  }
  return trials;
}

GridShape parse_shape(const std::string& s) {
  int r = 0, c = 0;
  char x = 0;
  std::istringstream in(s);
  if (!(in >> r >> x >> c) || (x != 'x' && x != 'X') || r < 1 || c < 1 || !(in >> std::ws).eof())
    throw ConfigError("shape must look like RxC, got '" + s + "'");
  return GridShape(r, c);
}

std::vector<GridShape> parse_shapes(std::istream& in) {
  std::vector<GridShape> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line.erase(0, line.find_first_not_of(" \t\r"));
    line.erase(line.find_last_not_of(" \t\r") + 1);
    if (!line.empty()) out.push_back(parse_shape(line));
  }
  if (out.empty()) throw ConfigError("shape list is empty");
  return out;
}

namespace {

json partition_json(const Partition& part) {
  json out = json::array();
  for (const auto& p : part.patches) {
    json runs = json::array();
    for (const auto& [i, a, b] : to_runs(p.coords)) runs.push_back({i, a, b});
    out.push_back({{"id", p.id}, {"runs", runs}});
  }
  return out;
}

Partition partition_from_json(const json& j) {
  Partition part;
  for (const auto& p : j) {
    std::vector<std::tuple<int, int, int>> runs;
    for (const auto& r : p.at("runs")) runs.emplace_back(r.at(0), r.at(1), r.at(2));
    part.patches.push_back({p.at("id").get<int>(), from_runs(runs)});
  }
  return part;
}

}  // namespace

void write_truth_json(std::ostream& out, const SimTrial& sim) {
  json doc;
  doc["name"] = sim.trial.name();
  doc["rows"] = sim.trial.shape().rows();
  doc["cols"] = sim.trial.shape().cols();
  doc["seed"] = sim.seed;
  doc["param_retries"] = sim.param_retries;
  doc["geometry_retries"] = sim.geometry_retries;
  doc["separation_bf"] = sim.separation_bf;
  doc["truth"] = partition_json(sim.truth);
  doc["oracle"] = partition_json(sim.oracle);
  json models = json::array();
  for (const auto& [id, m] : sim.models)
    models.push_back({{"id", id},
                      {"family", m.family.name()},
                      {"mu", m.params.mu},
                      {"sigma2", m.params.sigma2},
                      {"rho_r", m.params.rho_r},
                      {"rho_c", m.params.rho_c},
                      {"phi", m.params.phi}});
  doc["models"] = std::move(models);
  out << doc.dump(1) << '\n';
}

void read_truth_json(std::istream& in, SimTrial& sim) {
  try {
    const json doc = json::parse(in);
    sim.seed = doc.at("seed").get<std::uint64_t>();
    sim.param_retries = doc.value("param_retries", 0);
    sim.geometry_retries = doc.value("geometry_retries", 0);
    sim.separation_bf = doc.at("separation_bf").get<double>();
    sim.truth = partition_from_json(doc.at("truth"));
    sim.oracle = partition_from_json(doc.at("oracle"));
    sim.models.clear();
    for (const auto& m : doc.at("models")) {
      GrfParams p{m.at("mu"), m.at("sigma2"), m.at("rho_r"), m.at("rho_c"), m.at("phi")};
      sim.models[m.at("id").get<int>()] = {GrfFamily::parse(m.at("family")), p};
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("truth sidecar: ") + e.what(), 0);
  }
  sim.truth.validate(sim.trial.shape());
  sim.oracle.validate(sim.trial.shape());
}

}  // namespace fieldqc
