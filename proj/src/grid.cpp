#include "fieldqc/grid.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <queue>
#include <regex>
#include <set>
#include <sstream>

#include "fieldqc/errors.hpp"

namespace fieldqc {

GridShape::GridShape(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows <= 0 || cols <= 0) throw ConfigError("grid dimensions must be positive");
  present_.reserve(static_cast<std::size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) present_.push_back({i, j});
  mask_.assign(present_.size(), 1);
}

GridShape::GridShape(int rows, int cols, CoordSet present)
    : rows_(rows), cols_(cols), present_(std::move(present)) {
  if (rows <= 0 || cols <= 0) throw ConfigError("grid dimensions must be positive");
  normalize(present_);
  if (present_.empty()) throw EmptyTrialError("grid has no present plots");
  mask_.assign(static_cast<std::size_t>(rows) * cols, 0);
  for (const auto& c : present_) {
    if (!in_bounds(c)) throw InvalidCoordError("plot outside the grid");
    mask_[index(c)] = 1;
  }
}

TrialGrid::TrialGrid(GridShape shape, std::vector<double> values, std::string name)
    : shape_(std::move(shape)), values_(std::move(values)), name_(std::move(name)) {
  const auto total = static_cast<std::size_t>(shape_.rows()) * shape_.cols();
  if (values_.size() != total) throw ShapeMismatchError("value grid does not match shape");
  for (std::size_t k = 0; k < total; ++k) {
    const PlotCoord c{static_cast<int>(k) / shape_.cols(), static_cast<int>(k) % shape_.cols()};
    if (!shape_.contains(c)) {
      values_[k] = std::nan("");
    } else if (!std::isfinite(values_[k])) {
      throw ParamError("non-finite value at a present plot");
    }
  }
}

std::vector<double> TrialGrid::gather(std::span<const PlotCoord> coords) const {
  std::vector<double> out;
  out.reserve(coords.size());
  for (const auto& c : coords) out.push_back(values_[shape_.index(c)]);
  return out;
}

TrialGrid TrialGrid::with_values(std::vector<double> values) const {
  return TrialGrid(shape_, std::move(values), name_);
}

const Patch* Partition::find(int id) const {
  for (const auto& p : patches)
    if (p.id == id) return &p;
  return nullptr;
}

Patch* Partition::find(int id) {
  for (auto& p : patches)
    if (p.id == id) return &p;
  return nullptr;
}

std::vector<int> Partition::labels(const GridShape& shape) const {
  std::vector<int> out(static_cast<std::size_t>(shape.rows()) * shape.cols(), -1);
  for (const auto& p : patches)
    for (const auto& c : p.coords) out[shape.index(c)] = p.id;
  return out;
}

void Partition::validate(const GridShape& shape) const {
  std::vector<int> seen(static_cast<std::size_t>(shape.rows()) * shape.cols(), 0);
  std::set<int> ids;
  std::size_t total = 0;
  for (const auto& p : patches) {
    if (!ids.insert(p.id).second) throw ShapeMismatchError("duplicate patch id");
    if (p.coords.empty()) throw ShapeMismatchError("empty patch");
    for (const auto& c : p.coords) {
      if (!shape.contains(c)) throw InvalidCoordError("patch plot not present in grid");
      if (seen[shape.index(c)]++) throw ShapeMismatchError("patches overlap");
    }
    total += p.coords.size();
  }
  if (total != shape.size()) throw ShapeMismatchError("patches do not cover the grid");
}

Partition Partition::canonical() const {
  Partition out = *this;
  std::sort(out.patches.begin(), out.patches.end(),
            [](const Patch& a, const Patch& b) { return a.coords.front() < b.coords.front(); });
  for (std::size_t k = 0; k < out.patches.size(); ++k) out.patches[k].id = static_cast<int>(k);
  return out;
}

Partition Partition::single(const GridShape& shape) {
  return Partition{{Patch{0, shape.present()}}};
}

Partition Partition::from_labels(const GridShape& shape, std::span<const int> labels) {
  std::map<int, CoordSet> groups;
  for (const auto& c : shape.present()) groups[labels[shape.index(c)]].push_back(c);
  Partition out;
  for (auto& [id, coords] : groups) out.patches.push_back({id, std::move(coords)});
  return out;
}

bool same_partition(const Partition& a, const Partition& b) {
  if (a.size() != b.size()) return false;
  auto key = [](const Partition& p) {
    std::vector<const CoordSet*> sets;
    for (const auto& patch : p.patches) sets.push_back(&patch.coords);
    std::sort(sets.begin(), sets.end(), [](auto* x, auto* y) { return *x < *y; });
    return sets;
  };
  const auto ka = key(a);
  const auto kb = key(b);
  for (std::size_t k = 0; k < ka.size(); ++k)
    if (*ka[k] != *kb[k]) return false;
  return true;
}

void normalize(CoordSet& coords) {
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
}

CoordSet merge_coords(const CoordSet& a, const CoordSet& b) {
  CoordSet out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

CoordSet subtract_coords(const CoordSet& a, const CoordSet& b) {
  CoordSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

namespace {

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t k = 0;
  while (k < s.size() && (s[k] == ' ' || s[k] == '\t')) ++k;
  return s.substr(k);
}

bool parse_int(const std::string& s, int& out) {
  const auto t = trim(s);
  if (t.empty()) return false;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  return ec == std::errc() && ptr == t.data() + t.size();
}

bool parse_double(const std::string& s, double& out) {
  const auto t = trim(s);
  if (t.empty()) return false;
  try {
    std::size_t used = 0;
    out = std::stod(t, &used);
    return used == t.size() && std::isfinite(out);
  } catch (const std::exception&) {
    return false;
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

TrialGrid parse_trial(std::istream& in, TrialFormat /*format*/) {
  static const std::regex dims_re(R"(rows\s*=\s*(\d+)[\s,;]+cols\s*=\s*(\d+))");
  std::optional<std::pair<int, int>> declared;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  struct Row {
    PlotCoord c;
    std::optional<double> v;
  };
  std::vector<Row> rows;
  std::set<PlotCoord> seen;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '#') {
      std::smatch m;
      if (std::regex_search(line, m, dims_re))
        declared = std::make_pair(std::stoi(m[1].str()), std::stoi(m[2].str()));
      continue;
    }
    if (!header_seen) {
      if (line != "row,col,value") throw ParseError("expected header 'row,col,value'", line_no);
      header_seen = true;
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 3) throw ParseError("expected 3 fields", line_no);
    Row r;
    if (!parse_int(f[0], r.c.i) || !parse_int(f[1], r.c.j) || r.c.i < 0 || r.c.j < 0)
      throw ParseError("row/col must be nonnegative integers", line_no);
    if (!trim(f[2]).empty()) {
      double v = 0;
      if (!parse_double(f[2], v)) throw ParseError("malformed value '" + f[2] + "'", line_no);
      r.v = v;
    }
    if (!seen.insert(r.c).second)
      throw DuplicatePlotError("duplicate plot (" + std::to_string(r.c.i) + "," +
                               std::to_string(r.c.j) + ") at line " + std::to_string(line_no));
    rows.push_back(r);
  }
  if (!header_seen) throw ParseError("missing header", line_no);
  int nr = 0, nc = 0;
  CoordSet present;
  for (const auto& r : rows) {
    nr = std::max(nr, r.c.i + 1);
    nc = std::max(nc, r.c.j + 1);
    if (r.v) present.push_back(r.c);
  }
  if (present.empty()) throw EmptyTrialError("trial has no present plots");
  if (declared) {
    if (declared->first < nr || declared->second < nc)
      throw ParseError("declared dimensions smaller than data", line_no);
    nr = declared->first;
    nc = declared->second;
  }
  GridShape shape(nr, nc, std::move(present));
  std::vector<double> values(static_cast<std::size_t>(nr) * nc, std::nan(""));
  for (const auto& r : rows)
    if (r.v) values[shape.index(r.c)] = *r.v;
  return TrialGrid(std::move(shape), std::move(values));
}

TrialGrid parse_trial_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path, 0);
  auto trial = parse_trial(in);
  trial.set_name(std::filesystem::path(path).stem().string());
  return trial;
}

void write_trial_csv(std::ostream& out, const TrialGrid& trial) {
  const auto& s = trial.shape();
  out << "# rows=" << s.rows() << " cols=" << s.cols() << "\n";
  out << "row,col,value\n";
  char buf[64];
  for (int i = 0; i < s.rows(); ++i) {
    for (int j = 0; j < s.cols(); ++j) {
      const PlotCoord c{i, j};
      out << i << ',' << j << ',';
      if (s.contains(c)) {
        std::snprintf(buf, sizeof buf, "%.17g", trial.value(c));
        out << buf;
      }
      out << '\n';
    }
  }
}

std::vector<PlotCoord> neighbors(PlotCoord c, const GridShape& shape, AdjacencyKind adjacency) {
  if (!shape.contains(c)) throw InvalidCoordError("plot not present in grid");
  std::vector<PlotCoord> out;
  for (int di = -1; di <= 1; ++di) {
    for (int dj = -1; dj <= 1; ++dj) {
      if (di == 0 && dj == 0) continue;
      if (adjacency == AdjacencyKind::rook && di != 0 && dj != 0) continue;
      const PlotCoord n{c.i + di, c.j + dj};
      if (shape.contains(n)) out.push_back(n);
    }
  }
  return out;
}

std::vector<Patch> connected_components(const Patch& patch, const GridShape& shape,
                                        AdjacencyKind adjacency) {
  std::vector<int> member(static_cast<std::size_t>(shape.rows()) * shape.cols(), -1);
  for (const auto& c : patch.coords) member[shape.index(c)] = 0;
  std::vector<Patch> out;
  int next = 0;
  for (const auto& start : patch.coords) {
    if (member[shape.index(start)] != 0) continue;
    Patch comp{next++, {}};
    std::queue<PlotCoord> todo;
    todo.push(start);
    member[shape.index(start)] = 1;
    while (!todo.empty()) {
      const auto c = todo.front();
      todo.pop();
      comp.coords.push_back(c);
      for (const auto& n : neighbors(c, shape, adjacency)) {
        auto& m = member[shape.index(n)];
        if (m == 0) {
          m = 1;
          todo.push(n);
        }
      }
    }
    normalize(comp.coords);
    out.push_back(std::move(comp));
  }
  return out;
}

std::vector<BorderEntry> border_plots(const Partition& part, const GridShape& shape,
                                      AdjacencyKind adjacency) {
  const auto labels = part.labels(shape);
  std::vector<BorderEntry> out;
  for (const auto& p : part.patches) {
    for (const auto& c : p.coords)
      for (const auto& n : neighbors(c, shape, adjacency))
        if (const int l = labels[shape.index(n)]; l != p.id) out.push_back({c, p.id, l, n});
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool patches_adjacent(const CoordSet& a, const CoordSet& b, const GridShape& shape,
                      AdjacencyKind adjacency) {
  const auto& small = a.size() <= b.size() ? a : b;
  const auto& large = a.size() <= b.size() ? b : a;
  for (const auto& c : small) {
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        if (di == 0 && dj == 0) continue;
        if (adjacency == AdjacencyKind::rook && di != 0 && dj != 0) continue;
        const PlotCoord n{c.i + di, c.j + dj};
        if (shape.contains(n) && std::binary_search(large.begin(), large.end(), n)) return true;
      }
    }
  }
  return false;
}

std::vector<std::tuple<int, int, int>> to_runs(const CoordSet& coords) {
  std::vector<std::tuple<int, int, int>> runs;
  for (const auto& c : coords) {
    if (!runs.empty()) {
      auto& [i, j0, j1] = runs.back();
      if (i == c.i && j1 == c.j) {
        ++j1;
        continue;
      }
    }
    runs.emplace_back(c.i, c.j, c.j + 1);
  }
  return runs;
}

CoordSet from_runs(const std::vector<std::tuple<int, int, int>>& runs) {
  CoordSet out;
  for (const auto& [i, j0, j1] : runs)
    for (int j = j0; j < j1; ++j) out.push_back({i, j});
  normalize(out);
  return out;
}

std::string to_string(AdjacencyKind a) { return a == AdjacencyKind::rook ? "rook" : "queen"; }

AdjacencyKind parse_adjacency(const std::string& s) {
  if (s == "rook") return AdjacencyKind::rook;
  if (s == "queen") return AdjacencyKind::queen;
  throw ConfigError("unknown adjacency '" + s + "'");
}

}  // namespace fieldqc
