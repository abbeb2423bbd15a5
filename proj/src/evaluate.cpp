#include "fieldqc/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fieldqc/errors.hpp"
#include "fieldqc/model_store.hpp"

namespace fieldqc {

namespace {

/// Labels of `part` indexed by position in the sorted plot list; throws if the plot sets differ.
std::vector<int> labels_on(const Partition& part, const CoordSet& plots) {
  std::vector<int> out(plots.size(), -1);
  std::size_t covered = 0;
  for (std::size_t k = 0; k < part.patches.size(); ++k)
    for (const auto& c : part.patches[k].coords) {
      const auto it = std::lower_bound(plots.begin(), plots.end(), c);
      if (it == plots.end() || *it != c) throw ShapeMismatchError("partitions cover different plots");
      out[it - plots.begin()] = static_cast<int>(k);
      ++covered;
    }
  if (covered != plots.size()) throw ShapeMismatchError("partitions cover different plots");
  return out;
}

CoordSet plot_set(const Partition& p) {
  CoordSet all;
  for (const auto& patch : p.patches) all.insert(all.end(), patch.coords.begin(), patch.coords.end());
  std::sort(all.begin(), all.end());
  return all;
}

double choose2(double n) { return n * (n - 1) / 2; }

}  // namespace

double adjusted_rand_index(const Partition& a, const Partition& b) {
  const CoordSet plots = plot_set(a);
  if (std::adjacent_find(plots.begin(), plots.end()) != plots.end())
    throw ShapeMismatchError("overlapping patches");
  const auto la = labels_on(a, plots);
  const auto lb = labels_on(b, plots);
  std::map<std::pair<int, int>, long> table;
  std::vector<long> ra(a.size(), 0), cb(b.size(), 0);
  for (std::size_t n = 0; n < plots.size(); ++n) {
    ++table[{la[n], lb[n]}];
    ++ra[la[n]];
    ++cb[lb[n]];
  }
  double index = 0, sa = 0, sb = 0;
  for (const auto& [key, n] : table) index += choose2(n);
  for (long n : ra) sa += choose2(n);
  for (long n : cb) sb += choose2(n);
  const double expected = sa * sb / choose2(static_cast<double>(plots.size()));
  const double max_index = 0.5 * (sa + sb);
  if (max_index - expected == 0) return 1.0;
  return (index - expected) / (max_index - expected);
}

SimilarityScore similarity(const Partition& a, const Partition& b) {
  SimilarityScore s;
  s.ari = adjusted_rand_index(a, b);
  double total = 0;
  for (const auto& pa : a.patches) {
    double best = 0;
    for (const auto& pb : b.patches) {
      CoordSet inter;
      std::set_intersection(pa.coords.begin(), pa.coords.end(), pb.coords.begin(), pb.coords.end(),
                            std::back_inserter(inter));
      const double uni = double(pa.coords.size() + pb.coords.size() - inter.size());
      best = std::max(best, inter.size() / uni);
    }
    total += best;
  }
  s.best_match_jaccard = a.patches.empty() ? 0 : total / a.patches.size();
  return s;
}

Partition oracle_bottom_up(const IndexTree& tree, const Partition& truth) {
  std::vector<char> collapsed(tree.size(), 0);
  auto cut = [&] {
    Partition part;
    std::vector<int> stack{tree.root};
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      const auto& vx = tree.vertices[v];
      if (collapsed[v] || vx.leaf()) {
        part.patches.push_back({static_cast<int>(part.patches.size()), vx.coords});
        continue;
      }
      for (auto it = vx.children.rbegin(); it != vx.children.rend(); ++it) stack.push_back(*it);
    }
    return part;
  };
  for (std::size_t v = 0; v < tree.size(); ++v) collapsed[v] = tree.vertices[v].leaf();
  double current = adjusted_rand_index(cut(), truth);
  for (int v = static_cast<int>(tree.size()) - 1; v >= 0; --v) {
    const auto& vx = tree.vertices[v];
    if (vx.leaf()) continue;
    if (!std::all_of(vx.children.begin(), vx.children.end(), [&](int c) { return collapsed[c]; }))
      continue;
    collapsed[v] = 1;
    const double merged = adjusted_rand_index(cut(), truth);
    if (merged >= current) current = merged;
    else collapsed[v] = 0;
  }
  return cut();
}

Partition oracle_authenticate(const Partition& parts, const Partition& truth) {
  Partition current = parts;
  Partition best = parts;
  double best_ari = adjusted_rand_index(parts, truth);
  while (current.size() > 1) {
    std::optional<Partition> pick;
    double pick_ari = -2;
    for (std::size_t a = 0; a < current.size(); ++a)
      for (std::size_t b = a + 1; b < current.size(); ++b) {
        Partition cand;
        for (std::size_t k = 0; k < current.size(); ++k) {
          if (k == b) continue;
          Patch p = current.patches[k];
          if (k == a) p.coords = merge_coords(p.coords, current.patches[b].coords);
          cand.patches.push_back(std::move(p));
        }
        const double ari = adjusted_rand_index(cand, truth);
        if (ari > pick_ari) pick_ari = ari, pick = std::move(cand);
      }
    current = std::move(*pick);
    if (pick_ari >= best_ari) best_ari = pick_ari, best = current;
  }
  return best;
}

OptimalMerge optimal_merge(const Partition& detected, const Partition& truth) {
  OptimalMerge out;
  out.partition = oracle_authenticate(detected, truth);
  out.score = similarity(out.partition, truth);
  return out;
}

Variant Variant::parse(const std::string& s) {
  Variant v;
  v.name = s;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, '+')) {
    if (tok == "binary") v.tree = TreeKind::binary;
    else if (tok == "quad") v.tree = TreeKind::quad;
    else if (tok == "top_down") v.identify = IdentifyKind::top_down;
    else if (tok == "bottom_up") v.identify = IdentifyKind::bottom_up;
    else if (tok == "oracle") v.oracle = true;
    else throw ConfigError("unknown variant token '" + tok + "'");
  }
  return v;
}

std::vector<Variant> parse_variants(const std::string& list) {
  std::vector<Variant> out;
  std::istringstream in(list);
  std::string tok;
  while (std::getline(in, tok, ','))
    if (!tok.empty()) out.push_back(Variant::parse(tok));
  if (out.empty()) throw ConfigError("empty variant list");
  return out;
}

namespace {

std::vector<BenchmarkRow> benchmark_trial(const SimTrial& sim, int index,
                                          const PipelineConfig& base,
                                          const std::vector<Variant>& variants) {
  ModelStore store(sim.trial, base.cv);
  std::map<TreeKind, IndexTree> trees;
  std::vector<BenchmarkRow> rows;
  for (const auto& v : variants) {
    BenchmarkRow row;
    row.variant = v.name;
    row.trial = index;
    row.trial_name = sim.trial.name();
    row.separation_bf = sim.separation_bf;
    PipelineConfig cfg = base;
    cfg.tree = v.tree;
    cfg.identify = v.identify;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (!trees.count(v.tree)) trees.emplace(v.tree, build_tree(store, cfg));
      const IndexTree& tree = trees.at(v.tree);
      if (v.oracle) {
        const Partition identified = oracle_bottom_up(tree, sim.oracle);
        const Partition auth = oracle_authenticate(identified, sim.oracle);
        const auto verified = verify(store, fit_patches(store, auth, cfg), VerifyStage::cycle2, cfg);
        row.identified = static_cast<int>(identified.size());
        row.cycle1 = row.cycle2 = static_cast<int>(auth.size());
        row.final_count = static_cast<int>(verified.size());
        row.identified_sim = similarity(identified, sim.oracle);
        row.before_verify_sim = similarity(auth, sim.oracle);
        row.final_sim = similarity(verified.partition, sim.oracle);
        row.optimal_sim = optimal_merge(identified, sim.oracle).score;
      } else {
        const QcReport r = detect(store, cfg, &tree);
        row.identified = static_cast<int>(r.stage("identified").patches.size());
        row.cycle1 = static_cast<int>(r.stage("cycle1").patches.size());
        row.cycle2 = static_cast<int>(r.stage("cycle2").patches.size());
        row.final_count = r.patches;
        row.identified_sim = similarity(r.stage("identified").patches.partition, sim.oracle);
        row.before_verify_sim = similarity(r.stage("cycle2").patches.partition, sim.oracle);
        row.final_sim = similarity(r.final_patches().partition, sim.oracle);
        row.optimal_sim =
            optimal_merge(r.stage("identified").patches.partition, sim.oracle).score;
        row.threshold_counts = r.threshold_counts;
      }
    } catch (const Error& e) {
      row.error = e.what();
    }
    row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

BenchmarkSummary run_benchmark(const std::vector<SimTrial>& trials, const PipelineConfig& config,
                               const std::vector<Variant>& variants, int jobs) {
  if (trials.empty()) throw ConfigError("no trials to benchmark");
  if (variants.empty()) throw ConfigError("empty variant list");
  config.validate();
  std::vector<std::vector<BenchmarkRow>> per_trial(trials.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t; (t = next++) < trials.size();)
      per_trial[t] = benchmark_trial(trials[t], static_cast<int>(t), config, variants);
  };
  const int workers = std::clamp(jobs, 1, static_cast<int>(trials.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  BenchmarkSummary out;
  for (auto& rows : per_trial)
    for (auto& r : rows) out.rows.push_back(std::move(r));
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

void write_summary_csv(std::ostream& out, const BenchmarkSummary& s) {
  out << "variant,trial,name,identified,cycle1,cycle2,final,ari_identified,ari_before_verify,"
         "ari_final,jaccard_final,ari_optimal_merge,separation_bf,counts_by_threshold,error\n";
  for (const auto& r : s.rows) {
    std::string counts;
    for (std::size_t k = 0; k < r.threshold_counts.size(); ++k)
      counts += (k ? ";" : "") + std::to_string(r.threshold_counts[k]);
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << r.variant << ',' << r.trial << ',' << r.trial_name << ',' << r.identified << ','
        << r.cycle1 << ',' << r.cycle2 << ',' << r.final_count << ',' << fmt(r.identified_sim.ari)
        << ',' << fmt(r.before_verify_sim.ari) << ',' << fmt(r.final_sim.ari) << ','
        << fmt(r.final_sim.best_match_jaccard) << ',' << fmt(r.optimal_sim.ari) << ','
        << fmt(r.separation_bf) << ',' << counts << ',' << err << '\n';
  }
}

void write_summary_json(std::ostream& out, const BenchmarkSummary& s) {
  using nlohmann::json;
  std::vector<std::string> order;
  for (const auto& r : s.rows)
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
  json doc;
  doc["trials"] = s.rows.empty() ? 0 : s.rows.size() / order.size();
  json variants = json::object();
  for (const auto& name : order) {
    std::vector<double> ident, fin, ari, opt;
    std::map<int, int> ident_hist, final_hist;
    std::map<std::string, int> ari_hist;
    int failures = 0;
    for (const auto& r : s.rows) {
      if (r.variant != name) continue;
      if (!r.error.empty()) {
        ++failures;
        continue;
      }
      ident.push_back(r.identified);
      fin.push_back(r.final_count);
      ari.push_back(r.final_sim.ari);
      opt.push_back(r.optimal_sim.ari);
      ++ident_hist[r.identified];
      ++final_hist[r.final_count];
      const double lo = std::clamp(std::floor(r.final_sim.ari * 10) / 10, -1.0, 0.9);
      ++ari_hist[fmt(lo)];
    }
    json hist_i = json::object(), hist_f = json::object();
    for (const auto& [k, n] : ident_hist) hist_i[std::to_string(k)] = n;
    for (const auto& [k, n] : final_hist) hist_f[std::to_string(k)] = n;
    variants[name] = {{"failures", failures},
                      {"median_identified", median(ident)},
                      {"median_final", median(fin)},
                      {"median_ari_final", median(ari)},
                      {"median_ari_optimal_merge", median(opt)},
                      {"identified_histogram", hist_i},
                      {"final_histogram", hist_f},
                      {"ari_final_histogram", ari_hist}};
  }
  doc["variants"] = std::move(variants);
  out << doc.dump(1) << '\n';
}

void write_timings_csv(std::ostream& out, const BenchmarkSummary& s) {
  out << "variant,trial,seconds\n";
  for (const auto& r : s.rows) out << r.variant << ',' << r.trial << ',' << fmt(r.seconds) << '\n';
}

}  // namespace fieldqc
