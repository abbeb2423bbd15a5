#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "fieldqc/analysis.hpp"
#include "fieldqc/errors.hpp"
#include "fieldqc/evaluate.hpp"
#include "fieldqc/model_store.hpp"
#include "fieldqc/render.hpp"
#include "fieldqc/segment.hpp"
#include "fieldqc/simulate.hpp"

namespace fieldqc::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kExitCodes =
    "Exit codes: 0 stationary/ok, 10 nonstationarity flagged, 2 usage, 3 input parse,\n"
    "4 model fit, 5 configuration, 20 simulation failed, 21 missing truth sidecar, 1 other.";

struct PipelineFlags {
  std::string score = "cv_nll";
  std::string tree_score = "bic";
  std::string tree = "binary";
  std::string identify = "top_down";
  std::string families = "iid,ar1r,ar1c,ar1rc";
  bool nugget = false;
  std::string threshold = "decisive";
  std::string adjacency = "rook";
  int folds = 5;
  int seed = 0;

  void attach(CLI::App& app) {
    app.add_option("--score", score, "Pipeline score: cv_nll, bic or aic")->capture_default_str();
    app.add_option("--tree-score", tree_score, "Score used to grow the binary tree")
        ->capture_default_str();
    app.add_option("--tree", tree, "Tree kind: binary or quad")->capture_default_str();
    app.add_option("--identify", identify, "top_down or bottom_up")->capture_default_str();
    app.add_option("--families", families, "Comma separated GRF families")->capture_default_str();
    app.add_flag("--nugget", nugget, "Add the nugget variant of every correlated family");
    app.add_option("--threshold", threshold,
                   "Final evidence level: anecdotal, moderate, strong, very_strong, decisive")
        ->capture_default_str();
    app.add_option("--adjacency", adjacency, "rook or queen")->capture_default_str();
    app.add_option("--folds", folds, "Cross-validation folds")->capture_default_str();
    app.add_option("--seed", seed, "Offset of the cross-validation fold assignment")
        ->capture_default_str();
  }

  PipelineConfig config() const {
    PipelineConfig c;
    c.score = parse_score(score);
    c.tree_score = parse_score(tree_score);
    c.tree = parse_tree_kind(tree);
    c.identify = parse_identify_kind(identify);
    c.candidates = FamilySet::parse(families, nugget);
    c.threshold = EvidenceThreshold::parse(threshold);
    c.adjacency = parse_adjacency(adjacency);
    c.cv = {folds, seed};
    c.validate();
    return c;
  }
};

/// Error thrown for a missing truth sidecar.
class MissingSidecar : public Error {
  using Error::Error;
};

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << content;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

std::string fmt_evidence(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

int cmd_detect(const std::vector<std::string>& inputs, const std::string& design,
               const PipelineFlags& flags, const std::string& out_path, bool dump_tree,
               int jobs, std::ostream& out) {
  const PipelineConfig config = flags.config();
  if (inputs.size() > 1 && !design.empty())
    throw ConfigError("--design applies to a single --input");
  struct Job {
    std::string summary, report, tree;
    bool flagged = false;
    std::exception_ptr error;
  };
  std::vector<Job> results(inputs.size());
  auto run_one = [&](std::size_t k) {
    try {
      TrialGrid trial = parse_trial_file(inputs[k]);
      if (!design.empty()) {
        const auto d = parse_design_file(design, trial.shape());
        const auto first = gls_fit(trial, d, config.candidates, ScoreKind::bic);
        trial = first.marginal;
      }
      ModelStore store(trial, config.cv);
      const IndexTree tree = build_tree(store, config);
      const QcReport report = detect(store, config, &tree);
      std::ostringstream r, t;
      write_report_json(r, report);
      if (dump_tree) write_tree_json(t, tree);
      results[k].report = r.str();
      results[k].tree = t.str();
      results[k].flagged = report.flagged;
      results[k].summary = "trial=" + trial.name() + " patches=" + std::to_string(report.patches) +
                           " flag=" + (report.flagged ? "true" : "false") +
                           " evidence=" + fmt_evidence(report.evidence);
    } catch (...) {
      results[k].error = std::current_exception();
    }
  };
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next++) < inputs.size();) run_one(k);
  };
  const int workers = std::clamp(jobs, 1, static_cast<int>(inputs.size()));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  bool any_flag = false;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& res = results[k];
    if (res.error) std::rethrow_exception(res.error);
    fs::path report_path;
    if (inputs.size() == 1) report_path = out_path;
    else if (!out_path.empty())
      report_path = fs::path(out_path) / (fs::path(inputs[k]).stem().string() + ".report.json");
    if (!report_path.empty()) {
      write_file(report_path, res.report);
      if (dump_tree) {
        fs::path tp = report_path;
        tp.replace_extension(".tree.json");
        write_file(tp, res.tree);
      }
    } else if (dump_tree) {
      out << res.tree;
    }
    out << res.summary << '\n';
    any_flag |= res.flagged;
  }
  return any_flag ? kFlagged : kStationary;
}

int cmd_simulate(const std::string& shape, const std::string& shapes_file, int n,
                 const std::string& priors_file, std::uint64_t seed, const std::string& out_dir,
                 int jobs, std::ostream& out) {
  std::vector<GridShape> shapes;
  if (!shape.empty()) shapes.push_back(parse_shape(shape));
  if (!shapes_file.empty()) {
    std::ifstream in(shapes_file);
    if (!in) throw ConfigError("cannot open shapes file " + shapes_file);
    const auto more = parse_shapes(in);
    shapes.insert(shapes.end(), more.begin(), more.end());
  }
  if (shapes.empty()) throw ConfigError("give --shape or --shapes");
  const PriorConfig priors = priors_file.empty() ? PriorConfig{} : PriorConfig::parse_file(priors_file);
  const auto trials = run_study(shapes, priors, n, seed, jobs);
  for (const auto& sim : trials) {
    std::ostringstream csv, truth;
    write_trial_csv(csv, sim.trial);
    write_truth_json(truth, sim);
    write_file(fs::path(out_dir) / (sim.trial.name() + ".csv"), csv.str());
    write_file(fs::path(out_dir) / (sim.trial.name() + ".truth.json"), truth.str());
  }
  out << "simulated " << trials.size() << " trials into " << out_dir << '\n';
  return kStationary;
}

std::vector<SimTrial> load_trials(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir);
  std::vector<fs::path> csvs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") csvs.push_back(e.path());
  std::sort(csvs.begin(), csvs.end());
  if (csvs.empty()) throw ConfigError("no trial CSV files in " + dir);
  std::vector<SimTrial> trials;
  for (const auto& p : csvs) {
    SimTrial sim;
    sim.trial = parse_trial_file(p.string());
    fs::path side = p;
    side.replace_extension(".truth.json");
    std::ifstream in(side);
    if (!in) throw MissingSidecar("missing truth sidecar " + side.string());
    read_truth_json(in, sim);
    trials.push_back(std::move(sim));
  }
  return trials;
}

int cmd_evaluate(const std::string& dir, const std::string& variants, const PipelineFlags& flags,
                 const std::string& out_dir, int jobs, std::ostream& out) {
  const PipelineConfig config = flags.config();
  const auto vs = parse_variants(variants);
  const auto trials = load_trials(dir);
  const auto summary = run_benchmark(trials, config, vs, jobs);
  std::ostringstream csv, json, timings;
  write_summary_csv(csv, summary);
  write_summary_json(json, summary);
  write_timings_csv(timings, summary);
  write_file(fs::path(out_dir) / "summary.csv", csv.str());
  write_file(fs::path(out_dir) / "summary.json", json.str());
  write_file(fs::path(out_dir) / "timings.csv", timings.str());
  out << "evaluated " << trials.size() << " trials x " << vs.size() << " variants into "
      << out_dir << '\n';
  return kStationary;
}

int cmd_render(const std::string& input, const std::string& out_path, std::ostream& out) {
  std::ostringstream svg;
  if (fs::path(input).extension() == ".json") {
    std::ifstream in(input);
    if (!in) throw ParseError("cannot open " + input, 0);
    const auto view = read_report(in);
    render_svg(svg, view.trial, &view.final_partition);
  } else {
    render_svg(svg, parse_trial_file(input));
  }
  write_file(out_path, svg.str());
  out << "wrote " << out_path << '\n';
  return kStationary;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Detect mean and covariance nonstationarity in grid field trials."};
  app.footer(kExitCodes);
  app.require_subcommand(1);

  auto* detect = app.add_subcommand("detect", "Run the detection pipeline on trial CSV files");
  std::vector<std::string> inputs;
  std::string design, report_out;
  bool dump_tree = false;
  int jobs = 1;
  PipelineFlags detect_flags;
  detect->add_option("--input", inputs, "Trial CSV (row,col,value); repeatable")->required();
  detect->add_option("--design", design, "Design CSV (row,col,block[,variety]); detection then "
                                         "runs on GLS marginal residuals");
  detect->add_option("--out", report_out, "Report JSON (a directory when several inputs)");
  detect->add_flag("--dump-tree", dump_tree, "Also write the index tree as JSON");
  detect->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  detect_flags.attach(*detect);
  detect->footer(kExitCodes);

  auto* simulate = app.add_subcommand("simulate", "Simulate two-patch ground-truth trials");
  std::string shape, shapes_file, priors_file, sim_out;
  int n = 1;
  std::uint64_t sim_seed = 0;
  int sim_jobs = 1;
  auto* shape_opt = simulate->add_option("--shape", shape, "Grid shape RxC");
  simulate->add_option("--shapes", shapes_file, "File with one RxC shape per line")
      ->excludes(shape_opt);
  simulate->add_option("--n", n, "Number of trials")->check(CLI::PositiveNumber);
  simulate->add_option("--priors", priors_file, "Prior configuration JSON");
  simulate->add_option("--seed", sim_seed, "Root seed");
  simulate->add_option("--out", sim_out, "Output directory")->required();
  simulate->add_option("--jobs", sim_jobs, "Worker threads")->check(CLI::PositiveNumber);
  simulate->footer(kExitCodes);

  auto* evaluate = app.add_subcommand("evaluate", "Benchmark pipeline variants on simulated trials");
  std::string trials_dir, variants = "binary+top_down", eval_out;
  int eval_jobs = 1;
  PipelineFlags eval_flags;
  evaluate->add_option("--trials", trials_dir, "Directory of trial CSVs with truth sidecars")
      ->required();
  evaluate->add_option("--variants", variants,
                       "Comma separated variants, e.g. binary+top_down,quad+oracle")
      ->capture_default_str();
  evaluate->add_option("--out", eval_out, "Output directory")->required();
  evaluate->add_option("--jobs", eval_jobs, "Worker threads")->check(CLI::PositiveNumber);
  eval_flags.attach(*evaluate);
  evaluate->footer(kExitCodes);

  auto* render = app.add_subcommand("render", "Render a trial or report as an SVG heatmap");
  std::string render_in, render_out;
  render->add_option("--input", render_in, "Trial CSV or report JSON")->required();
  render->add_option("--out", render_out, "SVG file")->required();

  std::vector<std::string> rest(args.begin() + std::min<std::size_t>(1, args.size()), args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kStationary;
    }
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (detect->parsed())
      return cmd_detect(inputs, design, detect_flags, report_out, dump_tree, jobs, out);
    if (simulate->parsed())
      return cmd_simulate(shape, shapes_file, n, priors_file, sim_seed, sim_out, sim_jobs, out);
    if (evaluate->parsed()) return cmd_evaluate(trials_dir, variants, eval_flags, eval_out, eval_jobs, out);
    if (render->parsed()) return cmd_render(render_in, render_out, out);
  } catch (const MissingSidecar& e) {
    err << "error: " << e.what() << '\n';
    return kMissingSidecar;
  } catch (const SimulationError& e) {
    err << "error: " << e.what() << '\n';
    return kSimulation;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kParse;
  } catch (const DuplicatePlotError& e) {
    err << "error: " << e.what() << '\n';
    return kParse;
  } catch (const EmptyTrialError& e) {
    err << "error: " << e.what() << '\n';
    return kParse;
  } catch (const InvalidCoordError& e) {
    err << "error: " << e.what() << '\n';
    return kParse;
  } catch (const ShapeMismatchError& e) {
    err << "error: " << e.what() << '\n';
    return kParse;
  } catch (const Error& e) {
    // Fit, design, numerical and convergence failures.
    err << "error: " << e.what() << '\n';
    return kFit;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace fieldqc::cli
