#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "cli.hpp"
#include "fieldqc/errors.hpp"
#include "fieldqc/evaluate.hpp"
#include "fieldqc/grf.hpp"
#include "fieldqc/model_store.hpp"
#include "fieldqc/segment.hpp"
#include "fieldqc/simulate.hpp"
#include "fieldqc/tree.hpp"

using namespace fieldqc;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and targets.
constexpr double kLikelihoodTol = 1e-8;
constexpr double kLikelihoodSeconds = 10;
constexpr double kKroneckerTol = 1e-12;
constexpr double kRhoTol = 0.1;
constexpr double kMuSe = 3;
constexpr int kRecoveryNeeded = 18;
constexpr double kRecoverySeconds = 60;
constexpr int kNullTrials = 50;
constexpr int kNullNeeded = 45;
constexpr int kPowerTrials = 100;
constexpr double kPowerBf = 100;
constexpr double kPowerShare = 0.70;
constexpr double kPowerAri = 0.6;
constexpr double kPowerSeconds = 30 * 60;
constexpr double kOrderingShare = 0.90;
constexpr double kLargePatchShare = 0.85;
constexpr double kTreeSpeedup = 3;

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int n, const std::string& title, const Outcome& o) {
  std::printf("%s criterion %2d: %s (%s)\n", o.pass ? "PASS" : "FAIL", n, title.c_str(),
              o.detail.c_str());
  std::fflush(stdout);
  failures += !o.pass;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Dense multivariate normal log-density, in long double, built straight from the covariance
// definition sigma2 * ((1 - phi) rho_r^|di| rho_c^|dj| + phi [same plot]).
double oracle_loglik(const std::vector<PlotCoord>& coords, const std::vector<double>& y,
                     const GrfParams& p) {
  using Mat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  const auto n = static_cast<Eigen::Index>(coords.size());
  Mat s(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) {
      const long double r = std::pow(static_cast<long double>(p.rho_r), std::abs(coords[a].i - coords[b].i)) *
                            std::pow(static_cast<long double>(p.rho_c), std::abs(coords[a].j - coords[b].j));
      s(a, b) = p.sigma2 * ((1 - static_cast<long double>(p.phi)) * r + (a == b ? p.phi : 0.0L));
    }
  Eigen::LDLT<Mat> ldlt(s);
  Vec d(n);
  for (Eigen::Index a = 0; a < n; ++a) d(a) = y[a] - p.mu;
  const Vec sol = ldlt.solve(d);
  long double logdet = 0;
  for (Eigen::Index a = 0; a < n; ++a) logdet += std::log(ldlt.vectorD()(a));
  return static_cast<double>(-0.5L * n * std::log(2 * std::numbers::pi_v<long double>) -
                             0.5L * logdet - 0.5L * d.dot(sol));
}

Outcome likelihood_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  std::uniform_real_distribution<double> unit(0, 1);
  double worst = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const GrfFamily family = GrfFamily::from_ordinal(static_cast<int>(rng() % kFamilyCount));
    GrfParams p;
    p.mu = 4 * unit(rng) - 2;
    p.sigma2 = 0.2 + 3 * unit(rng);
    p.rho_r = family.has_row() ? 0.95 * unit(rng) : 0;
    p.rho_c = family.has_col() ? 0.95 * unit(rng) : 0;
    p.phi = family.nugget ? 0.9 * unit(rng) : 0;
    // Random patch of up to 30 plots inside a 7x7 window.
    const int want = 1 + static_cast<int>(rng() % 30);
    std::vector<PlotCoord> all;
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j) all.push_back({i, j});
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<PlotCoord> coords(all.begin(), all.begin() + want);
    std::sort(coords.begin(), coords.end());
    const GridShape shape(7, 7, coords);
    const auto y = sample_field(coords, family, p, rng);
    std::vector<double> dense(49, 0.0);
    for (int k = 0; k < want; ++k) dense[shape.index(coords[k])] = y[k];
    const TrialGrid trial(shape, dense);
    const double got = log_likelihood(trial, coords, family, p);
    worst = std::max(worst, std::abs(got - oracle_loglik(coords, y, p)));
  }
  const double secs = seconds_since(t0);
  return {worst <= kLikelihoodTol && secs < kLikelihoodSeconds,
          fmt("max |diff| %.2e over 200 instances, %.1f s", worst, secs)};
}

Outcome kronecker() {
  double worst = 0;
  Rng rng(7);
  std::uniform_real_distribution<double> unit(0, 0.99);
  for (int rows = 1; rows <= 6; ++rows)
    for (int cols = 1; cols <= 6; ++cols) {
      const GrfParams p{0, 1.7, unit(rng), unit(rng), 0};
      const GridShape g(rows, cols);
      const Eigen::MatrixXd s = build_covariance(g.present(), {Correlation::ar1_rows_cols, false}, p);
      Eigen::MatrixXd sr(rows, rows), sc(cols, cols);
      for (int a = 0; a < rows; ++a)
        for (int b = 0; b < rows; ++b) sr(a, b) = std::pow(p.rho_r, std::abs(a - b));
      for (int a = 0; a < cols; ++a)
        for (int b = 0; b < cols; ++b) sc(a, b) = std::pow(p.rho_c, std::abs(a - b));
      // Row-major plot order: entry (i*cols + j, k*cols + l) = sr(i,k) sc(j,l).
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
          for (int k = 0; k < rows; ++k)
            for (int l = 0; l < cols; ++l)
              worst = std::max(worst, std::abs(s(i * cols + j, k * cols + l) -
                                               p.sigma2 * sr(i, k) * sc(j, l)));
    }
  return {worst <= kKroneckerTol, fmt("max |diff| %.2e on 36 rectangles", worst)};
}

// 1' Q 1 for the precision of a unit-variance AR(1) of length n.
double ar1_precision_sum(int n, double rho) {
  if (n == 1) return 1;
  return (2 + (n - 2) * (1 + rho * rho) - 2 * (n - 1) * rho) / (1 - rho * rho);
}

Outcome recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  const GridShape g(40, 40);
  const GrfFamily family{Correlation::ar1_rows_cols, false};
  int ok = 0;
  std::string misses;
  for (int seed = 1; seed <= 20; ++seed) {
    Rng rng(derive_seed(3, "recovery", seed));
    const GrfParams truth{1.0, 1.0 + 0.05 * seed, 0.2 + 0.03 * seed, 0.7 - 0.025 * seed, 0};
    const auto y = sample_field(g.present(), family, truth, rng);
    const auto fit = fit_mle(y, g.present(), family);
    const double se = std::sqrt(truth.sigma2 / (ar1_precision_sum(40, truth.rho_r) *
                                                ar1_precision_sum(40, truth.rho_c)));
    const bool good = std::abs(fit.params.rho_r - truth.rho_r) <= kRhoTol &&
                      std::abs(fit.params.rho_c - truth.rho_c) <= kRhoTol &&
                      std::abs(fit.params.mu - truth.mu) <= kMuSe * se;
    ok += good;
    if (!good) misses += " " + std::to_string(seed);
  }
  const double secs = seconds_since(t0);
  return {ok >= kRecoveryNeeded && secs < kRecoverySeconds,
          fmt("%d/20 recovered, %.1f s%s%s", ok, secs, misses.empty() ? "" : ", missed seeds",
              misses.c_str())};
}

Outcome null_control() {
  const GridShape g(10, 10);
  const PatchPrior prior;
  PipelineConfig config;
  int single = 0;
  std::map<std::string, std::pair<int, int>> by_family;
  for (int t = 0; t < kNullTrials; ++t) {
    Rng rng(derive_seed(17, "null", t));
    const GrfFamily family = prior.sample_family(rng);
    const GrfParams params = prior.sample_params(family, rng);
    const auto y = sample_field(g.present(), family, params, rng);
    const auto r = detect(TrialGrid(g, y), config);
    single += r.patches == 1;
    auto& [n, k] = by_family[family.name()];
    ++n;
    k += r.patches == 1;
  }
  std::string split;
  for (const auto& [name, nk] : by_family) split += fmt(" %s %d/%d", name.c_str(), nk.second, nk.first);
  return {single >= kNullNeeded, fmt("m=1 in %d/%d;%s", single, kNullTrials, split.c_str())};
}

struct Batch {
  BenchmarkSummary summary;
  double seconds = 0;
  std::vector<const BenchmarkRow*> rows(const std::string& variant) const {
    std::vector<const BenchmarkRow*> out;
    for (const auto& r : summary.rows)
      if (r.variant == variant) out.push_back(&r);
    return out;
  }
};

Batch power_batch() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto trials = run_study({GridShape(10, 10)}, PriorConfig{}, kPowerTrials, 5);
  Batch b;
  b.summary = run_benchmark(trials, PipelineConfig{},
                            parse_variants("binary+top_down,binary+bottom_up,binary+oracle,quad+oracle"));
  b.seconds = seconds_since(t0);
  return b;
}

Outcome power(const Batch& b) {
  int strong = 0, two = 0, errors = 0;
  std::vector<double> ari;
  for (const auto* r : b.rows("binary+top_down")) {
    errors += !r->error.empty();
    if (r->separation_bf < kPowerBf) continue;
    ++strong;
    two += r->error.empty() && r->final_count == 2;
    ari.push_back(r->final_sim.ari);
  }
  const double share = strong ? double(two) / strong : 0;
  const double med = median(ari);
  return {share >= kPowerShare && med >= kPowerAri && b.seconds < kPowerSeconds,
          fmt("%d strong trials, exactly 2 patches in %d (%.0f%%), median ARI %.3f, %d errors, "
              "batch %.0f s",
              strong, two, 100 * share, med, errors, b.seconds)};
}

Outcome identification_order(const Batch& b) {
  const auto td = b.rows("binary+top_down"), bu = b.rows("binary+bottom_up");
  int ok = 0;
  for (std::size_t k = 0; k < td.size(); ++k) ok += bu[k]->identified >= td[k]->identified;
  const double share = double(ok) / td.size();
  return {share >= kOrderingShare, fmt("bottom_up >= top_down in %d/%zu trials", ok, td.size())};
}

Outcome tree_order(const Batch& b) {
  std::vector<double> qc, bc, qa, ba;
  for (const auto* r : b.rows("quad+oracle")) qc.push_back(r->final_count), qa.push_back(r->final_sim.ari);
  for (const auto* r : b.rows("binary+oracle")) bc.push_back(r->final_count), ba.push_back(r->final_sim.ari);
  int quad_one = 0;
  for (double c : qc) quad_one += c == 1;
  const double mqc = median(qc), mbc = median(bc), mqa = median(qa), mba = median(ba);
  return {mqc <= mbc && mba > mqa,
          fmt("median patches quad %.1f binary %.1f; median ARI quad %.3f binary %.3f; quad m=1 in %d",
              mqc, mbc, mqa, mba, quad_one)};
}

Outcome threshold_monotone(const Batch& b) {
  int violations = 0, checked = 0;
  for (const auto& r : b.summary.rows) {
    if (r.threshold_counts.empty()) continue;
    ++checked;
    for (std::size_t k = 1; k < r.threshold_counts.size(); ++k)
      violations += r.threshold_counts[k] > r.threshold_counts[k - 1];
  }
  return {violations == 0 && checked > 0,
          fmt("%d violations over %d pipeline runs", violations, checked)};
}

Outcome verification_gain(const Batch& b) {
  int decreases = 0, n = 0;
  std::vector<double> before, after;
  std::string worst;
  double worst_drop = 0;
  for (const auto* variant : {"binary+oracle", "quad+oracle"})
    for (const auto* r : b.rows(variant)) {
      if (!r->error.empty()) continue;
      ++n;
      before.push_back(r->before_verify_sim.ari);
      after.push_back(r->final_sim.ari);
      const double drop = r->before_verify_sim.ari - r->final_sim.ari;
      if (drop > 1e-12) {
        ++decreases;
        if (drop > worst_drop) worst_drop = drop, worst = fmt("%s trial %d", variant, r->trial);
      }
    }
  const double mb = median(before), ma = median(after);
  return {decreases == 0 && ma > mb,
          fmt("median ARI %.3f -> %.3f over %d runs; %d decreases%s%s", mb, ma, n, decreases,
              worst.empty() ? "" : ", largest in ", worst.c_str())};
}

int run_cli(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "fieldqc");
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  if (out) *out = o.str();
  return code;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fieldqc_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Outcome rcbd_gradient() {
  const auto dir = scratch("rcbd");
  const GridShape g(10, 31);
  Rng rng(1);
  // Disease gradient along each row: AR(1) across columns.
  const auto field = sample_field(g.present(), {Correlation::ar1_cols, false}, {0, 1, 0, 0.9, 0}, rng);
  std::vector<double> y(field.begin(), field.end());
  std::ofstream design(dir / "design.csv");
  design << "row,col,block\n";
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 31; ++j) {
      design << i << ',' << j << ',' << (i < 5 ? "I" : "II") << '\n';
      if (i >= 5) y[g.index({i, j})] += 1.5;
    }
  design.close();
  std::ofstream trial(dir / "rcbd.csv");
  write_trial_csv(trial, TrialGrid(g, y));
  trial.close();

  const std::string in = (dir / "rcbd.csv").string(), ds = (dir / "design.csv").string();
  std::string iid_line;
  const int iid = run_cli({"detect", "--input", in, "--design", ds, "--families", "iid"}, &iid_line);
  const int ar = run_cli({"detect", "--input", in, "--design", ds, "--out", (dir / "ar.json").string()});
  std::ifstream rep(dir / "ar.json");
  const auto view = read_report(rep);
  std::size_t largest = 0;
  for (const auto& p : view.final_partition.patches) largest = std::max(largest, p.coords.size());
  const double share = double(largest) / g.size();
  const bool iid_ok = iid == cli::kFlagged;
  const bool ar_ok = (ar == cli::kStationary || ar == cli::kFlagged) && view.patches <= 2 &&
                     share >= kLargePatchShare;
  iid_line.erase(iid_line.find_last_not_of('\n') + 1);
  return {iid_ok && ar_ok, fmt("iid: exit %d [%s]; AR(1): exit %d, m=%d, largest patch %.0f%%", iid,
                               iid_line.c_str(), ar, view.patches, 100 * share)};
}

std::map<std::string, std::string> dir_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) {
      std::ifstream in(e.path(), std::ios::binary);
      out[fs::relative(e.path(), dir).string()] = {std::istreambuf_iterator<char>(in), {}};
    }
  return out;
}

Outcome determinism() {
  std::vector<std::map<std::string, std::string>> runs;
  std::vector<std::string> stdouts;
  for (int rep = 0; rep < 2; ++rep) {
    const auto dir = scratch("determinism_" + std::to_string(rep));
    const std::string d = dir.string();
    std::string log, line;
    run_cli({"simulate", "--shape", "8x9", "--n", "3", "--seed", "11", "--out", d + "/trials"}, &line);
    log += line;
    run_cli({"detect", "--input", d + "/trials/trial_0000.csv", "--input",
             d + "/trials/trial_0001.csv", "--out", d + "/reports", "--dump-tree", "--jobs", "2"},
            &line);
    log += line;
    run_cli({"evaluate", "--trials", d + "/trials", "--variants", "binary+top_down,quad+oracle",
             "--out", d + "/eval"},
            &line);
    log += line;
    run_cli({"render", "--input", d + "/reports/trial_0000.report.json", "--out", d + "/r.svg"});
    run_cli({"render", "--input", d + "/trials/trial_0002.csv", "--out", d + "/t.svg"});
    auto bytes = dir_bytes(dir);
    bytes.erase("eval/timings.csv");  // wall-clock timings
    runs.push_back(std::move(bytes));
    // Paths differ between the two scratch directories.
    std::string::size_type at;
    while ((at = log.find(d)) != std::string::npos) log.replace(at, d.size(), "<dir>");
    stdouts.push_back(log);
  }
  std::size_t differing = 0;
  for (const auto& [name, content] : runs[0]) {
    const auto it = runs[1].find(name);
    differing += it == runs[1].end() || it->second != content;
  }
  const bool ok = differing == 0 && runs[0].size() == runs[1].size() && stdouts[0] == stdouts[1] &&
                  runs[0].size() >= 12;
  return {ok, fmt("%zu files compared, %zu differ", runs[0].size(), differing)};
}

Outcome tree_timing() {
  const GridShape g(20, 20);
  Rng rng(12);
  const auto y = sample_field(g.present(), {Correlation::ar1_rows_cols, false}, {0, 1, 0.4, 0.3, 0}, rng);
  const TrialGrid trial(g, y);
  auto timed = [&](ScoreKind score) {
    ModelStore store(trial);
    const auto t0 = std::chrono::steady_clock::now();
    const auto tree = build_binary_tree(store, score, FamilySet::standard());
    return std::pair{seconds_since(t0), tree.size()};
  };
  const auto [bic_s, bic_n] = timed(ScoreKind::bic);
  const auto [cv_s, cv_n] = timed(ScoreKind::cv_nll);
  const double ratio = cv_s / bic_s;
  return {ratio >= kTreeSpeedup && bic_n > 0 && cv_n > 0,
          fmt("BIC %.2f s, CV-NLL %.2f s, ratio %.1f", bic_s, cv_s, ratio)};
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  report(1, "likelihood matches a dense MVN oracle", likelihood_oracle());
  report(2, "separable covariance equals the Kronecker construction", kronecker());
  report(3, "parameter recovery on 40x40 fields", recovery());
  report(4, "null control on stationary trials", null_control());
  const Batch batch = power_batch();
  report(5, "power and shape on simulated two-patch trials", power(batch));
  report(6, "bottom-up identifies at least as many patches as top-down", identification_order(batch));
  report(7, "quad-tree oracle merges more than binary-tree oracle", tree_order(batch));
  report(8, "patch count non-increasing across thresholds", threshold_monotone(batch));
  report(9, "verification never lowers ARI of oracle partitions", verification_gain(batch));
  report(10, "RCBD with an along-row AR(1) gradient", rcbd_gradient());
  report(11, "byte-identical outputs on re-run", determinism());
  report(12, "BIC tree construction at least 3x faster than CV-NLL", tree_timing());
  std::printf("%d of 12 criteria failed, %.0f s total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
