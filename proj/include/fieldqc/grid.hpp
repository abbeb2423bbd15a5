#pragma once

#include <compare>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace fieldqc {

/// Row/column index of one plot, both zero based.
struct PlotCoord {
  int i = 0;
  int j = 0;
  auto operator<=>(const PlotCoord&) const = default;
};

/// Sorted (row-major), duplicate-free list of plots.
using CoordSet = std::vector<PlotCoord>;

enum class AdjacencyKind { rook, queen };

/// Grid extent plus the mask of plots that carry data.
class GridShape {
 public:
  GridShape() = default;
  /// Full rectangle.
  GridShape(int rows, int cols);
  /// Rectangle with only `present` plots observed.
  GridShape(int rows, int cols, CoordSet present);

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  const CoordSet& present() const noexcept { return present_; }
  std::size_t size() const noexcept { return present_.size(); }

  bool in_bounds(PlotCoord c) const noexcept {
    return c.i >= 0 && c.j >= 0 && c.i < rows_ && c.j < cols_;
  }
  bool contains(PlotCoord c) const noexcept {
    return in_bounds(c) && mask_[index(c)] != 0;
  }
  int index(PlotCoord c) const noexcept { return c.i * cols_ + c.j; }

  friend bool operator==(const GridShape& a, const GridShape& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.present_ == b.present_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  CoordSet present_;
  std::vector<std::uint8_t> mask_;
};

/// Grid-indexed values; absent plots carry no value.
class TrialGrid {
 public:
  TrialGrid() = default;
  /// `values` is row-major of size rows*cols; entries of absent plots are ignored.
  TrialGrid(GridShape shape, std::vector<double> values, std::string name = {});

  const GridShape& shape() const noexcept { return shape_; }
  const std::string& name() const noexcept { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }

  double value(PlotCoord c) const { return values_[shape_.index(c)]; }
  /// Values gathered in the order of `coords`.
  std::vector<double> gather(std::span<const PlotCoord> coords) const;
  /// Row-major dense storage (NaN at absent plots).
  const std::vector<double>& dense() const noexcept { return values_; }

  /// Same shape, new values at the present plots (row-major dense input).
  TrialGrid with_values(std::vector<double> values) const;

 private:
  GridShape shape_;
  std::vector<double> values_;
  std::string name_;
};

struct Patch {
  int id = 0;
  CoordSet coords;
};

/// Disjoint patches covering every present plot.
struct Partition {
  std::vector<Patch> patches;

  std::size_t size() const noexcept { return patches.size(); }
  const Patch* find(int id) const;
  Patch* find(int id);

  /// Row-major label grid, -1 for absent plots.
  std::vector<int> labels(const GridShape& shape) const;
  /// Throws InvalidCoordError / ShapeMismatchError when the cover/disjointness law fails.
  void validate(const GridShape& shape) const;
  /// Patches sorted by first plot and relabelled 0..m-1.
  Partition canonical() const;

  static Partition single(const GridShape& shape);
  static Partition from_labels(const GridShape& shape, std::span<const int> labels);
};

/// Equal as a set of coordinate sets (ids ignored).
bool same_partition(const Partition& a, const Partition& b);

CoordSet merge_coords(const CoordSet& a, const CoordSet& b);
CoordSet subtract_coords(const CoordSet& a, const CoordSet& b);
void normalize(CoordSet& coords);

enum class TrialFormat { csv };

/// Parses `row,col,value` CSV. An optional `# rows=R cols=C` comment fixes the extent.
TrialGrid parse_trial(std::istream& in, TrialFormat format = TrialFormat::csv);
TrialGrid parse_trial_file(const std::string& path);
void write_trial_csv(std::ostream& out, const TrialGrid& trial);

std::vector<PlotCoord> neighbors(PlotCoord c, const GridShape& shape, AdjacencyKind adjacency);
std::vector<Patch> connected_components(const Patch& patch, const GridShape& shape,
                                        AdjacencyKind adjacency);

/// One adjacent pair of plots in different patches, seen from `plot`.
struct BorderEntry {
  PlotCoord plot;
  int own_patch;
  int neighbor_patch;
  PlotCoord neighbor;
  auto operator<=>(const BorderEntry&) const = default;
};
std::vector<BorderEntry> border_plots(const Partition& part, const GridShape& shape,
                                      AdjacencyKind adjacency);

/// True when some plot of `a` neighbours some plot of `b`.
bool patches_adjacent(const CoordSet& a, const CoordSet& b, const GridShape& shape,
                      AdjacencyKind adjacency);

/// Row runs [i, j_begin, j_end) covering `coords`.
std::vector<std::tuple<int, int, int>> to_runs(const CoordSet& coords);
CoordSet from_runs(const std::vector<std::tuple<int, int, int>>& runs);

std::string to_string(AdjacencyKind a);
AdjacencyKind parse_adjacency(const std::string& s);

}  // namespace fieldqc
