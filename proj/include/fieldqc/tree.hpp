#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fieldqc/grf.hpp"
#include "fieldqc/grid.hpp"

namespace fieldqc {

class ModelStore;

enum class TreeKind { quad, binary };
std::string to_string(TreeKind k);
TreeKind parse_tree_kind(const std::string& s);

struct TreeVertex {
  int id = 0;
  CoordSet coords;
  std::vector<int> children;
  std::optional<int> parent;

  bool leaf() const noexcept { return children.empty(); }
};

/// Nested hierarchical partition of the grid. Vertex ids are indices into `vertices`.
struct IndexTree {
  TreeKind kind = TreeKind::quad;
  std::vector<TreeVertex> vertices;
  int root = 0;

  const TreeVertex& vertex(int id) const;
  std::size_t size() const noexcept { return vertices.size(); }
};

struct SplitConstraints {
  int min_rows_cols = 1;
  int min_plots = 6;

  bool admits(const CoordSet& coords) const;
};

IndexTree build_quad_tree(const GridShape& shape, SplitConstraints constraints = {});

/// Every row and column pivot is tried at each vertex; the split with the lowest summed
/// child score wins (ties: row splits first, then the smaller pivot).
IndexTree build_binary_tree(ModelStore& store, ScoreKind score, const FamilySet& candidates,
                            SplitConstraints constraints = {});
IndexTree build_binary_tree(const TrialGrid& trial, ScoreKind score, const FamilySet& candidates,
                            SplitConstraints constraints = {}, CvOptions cv = {});

/// Leaves in depth-first order.
std::vector<int> leaves(const IndexTree& tree);
/// Leaves of the subtree rooted at v.
std::vector<int> leaves(const IndexTree& tree, int v);
std::vector<int> descendants(const IndexTree& tree, int v);
std::vector<int> siblings(const IndexTree& tree, int v);

void write_tree_json(std::ostream& out, const IndexTree& tree);

}  // namespace fieldqc
