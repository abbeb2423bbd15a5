#include "fieldqc/tree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "fieldqc/errors.hpp"
#include "fieldqc/model_store.hpp"

namespace fieldqc {

std::string to_string(TreeKind k) { return k == TreeKind::quad ? "quad" : "binary"; }

TreeKind parse_tree_kind(const std::string& s) {
  if (s == "quad") return TreeKind::quad;
  if (s == "binary") return TreeKind::binary;
  throw ConfigError("unknown tree kind '" + s + "'");
}

const TreeVertex& IndexTree::vertex(int id) const {
  if (id < 0 || id >= static_cast<int>(vertices.size()))
    throw InvalidVertexError("no vertex " + std::to_string(id));
  return vertices[id];
}

namespace {

struct Extent {
  int i0, i1, j0, j1;  // inclusive
};

Extent extent(const CoordSet& coords) {
  Extent e{coords.front().i, coords.front().i, coords.front().j, coords.front().j};
  for (const auto& c : coords) {
    e.i0 = std::min(e.i0, c.i);
    e.i1 = std::max(e.i1, c.i);
    e.j0 = std::min(e.j0, c.j);
    e.j1 = std::max(e.j1, c.j);
  }
  return e;
}

int add_vertex(IndexTree& tree, CoordSet coords, std::optional<int> parent) {
  const int id = static_cast<int>(tree.vertices.size());
  tree.vertices.push_back({id, std::move(coords), {}, parent});
  if (parent) tree.vertices[*parent].children.push_back(id);
  return id;
}

int ceil_mid(int lo, int hi) { return static_cast<int>(std::ceil((hi - lo) / 2.0 + lo)); }

}  // namespace

bool SplitConstraints::admits(const CoordSet& coords) const {
  if (coords.empty() || static_cast<int>(coords.size()) < min_plots) return false;
  const auto e = extent(coords);
  return e.i1 - e.i0 + 1 >= min_rows_cols && e.j1 - e.j0 + 1 >= min_rows_cols;
}

IndexTree build_quad_tree(const GridShape& shape, SplitConstraints constraints) {
  if (constraints.min_plots < 1) throw ConfigError("min_plots must be positive");
  IndexTree tree;
  tree.kind = TreeKind::quad;
  add_vertex(tree, shape.present(), std::nullopt);
  for (std::size_t v = 0; v < tree.vertices.size(); ++v) {
    const CoordSet coords = tree.vertices[v].coords;
    if (coords.size() <= 1) continue;
    const auto e = extent(coords);
    const int pr = ceil_mid(e.i0, e.i1);
    const int pc = ceil_mid(e.j0, e.j1);
    std::vector<CoordSet> parts(4);
    for (const auto& c : coords) parts[(c.i >= pr) * 2 + (c.j >= pc)].push_back(c);
    std::erase_if(parts, [](const CoordSet& p) { return p.empty(); });
    if (parts.size() < 2) continue;
    if (!std::all_of(parts.begin(), parts.end(),
                     [&](const CoordSet& p) { return constraints.admits(p); }))
      continue;
    for (auto& p : parts) add_vertex(tree, std::move(p), static_cast<int>(v));
  }
  return tree;
}

IndexTree build_binary_tree(ModelStore& store, ScoreKind score, const FamilySet& candidates,
                            SplitConstraints constraints) {
  if (constraints.min_plots < 2) throw ConfigError("min_plots must be at least 2");
  if (candidates.empty()) throw ConfigError("empty candidate family set");
  IndexTree tree;
  tree.kind = TreeKind::binary;
  add_vertex(tree, store.trial().shape().present(), std::nullopt);

  for (std::size_t v = 0; v < tree.vertices.size(); ++v) {
    const CoordSet coords = tree.vertices[v].coords;
    const auto e = extent(coords);
    double best = std::numeric_limits<double>::infinity();
    CoordSet best_a, best_b, first_a, first_b;
    auto consider = [&](bool by_row, int pivot) {
      CoordSet a, b;
      for (const auto& c : coords) ((by_row ? c.i : c.j) < pivot ? a : b).push_back(c);
      if (!constraints.admits(a) || !constraints.admits(b)) return;
      if (first_a.empty()) {
        first_a = a;
        first_b = b;
      }
      const auto fa = store.try_select(a, candidates, score);
      if (!fa) return;
      const auto fb = store.try_select(b, candidates, score);
      if (!fb) return;
      const double total = fa->score + fb->score;
      if (total < best) {
        best = total;
        best_a = std::move(a);
        best_b = std::move(b);
      }
    };
    for (int r = e.i0 + 1; r <= e.i1; ++r) consider(true, r);
    for (int c = e.j0 + 1; c <= e.j1; ++c) consider(false, c);
    if (best_a.empty()) {
      // No split could be scored at all (e.g. constant values): split geometrically.
      best_a = std::move(first_a);
      best_b = std::move(first_b);
    }
    if (best_a.empty()) continue;
    add_vertex(tree, std::move(best_a), static_cast<int>(v));
    add_vertex(tree, std::move(best_b), static_cast<int>(v));
  }
  return tree;
}

IndexTree build_binary_tree(const TrialGrid& trial, ScoreKind score, const FamilySet& candidates,
                            SplitConstraints constraints, CvOptions cv) {
  ModelStore store(trial, cv);
  return build_binary_tree(store, score, candidates, constraints);
}

std::vector<int> leaves(const IndexTree& tree, int v) {
  std::vector<int> out;
  std::vector<int> stack{v};
  tree.vertex(v);
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    const auto& ch = tree.vertices[u].children;
    if (ch.empty()) out.push_back(u);
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
  }
  return out;
}

std::vector<int> leaves(const IndexTree& tree) { return leaves(tree, tree.root); }

std::vector<int> descendants(const IndexTree& tree, int v) {
  std::vector<int> out;
  std::vector<int> stack(tree.vertex(v).children.rbegin(), tree.vertex(v).children.rend());
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    out.push_back(u);
    const auto& ch = tree.vertices[u].children;
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
  }
  return out;
}

std::vector<int> siblings(const IndexTree& tree, int v) {
  const auto& vx = tree.vertex(v);
  if (!vx.parent) return {};
  std::vector<int> out;
  for (int c : tree.vertices[*vx.parent].children)
    if (c != v) out.push_back(c);
  return out;
}

void write_tree_json(std::ostream& out, const IndexTree& tree) {
  nlohmann::json doc;
  doc["kind"] = to_string(tree.kind);
  doc["root"] = tree.root;
  auto& vs = doc["vertices"] = nlohmann::json::array();
  for (const auto& v : tree.vertices) {
    nlohmann::json j;
    j["id"] = v.id;
    j["parent"] = v.parent ? nlohmann::json(*v.parent) : nlohmann::json(nullptr);
    j["children"] = v.children;
    auto& runs = j["runs"] = nlohmann::json::array();
    for (const auto& [i, a, b] : to_runs(v.coords)) runs.push_back({i, a, b});
    vs.push_back(std::move(j));
  }
  out << doc.dump(1) << '\n';
}

}  // namespace fieldqc
