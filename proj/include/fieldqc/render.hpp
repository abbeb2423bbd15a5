#pragma once

#include <ostream>

#include "fieldqc/grid.hpp"

namespace fieldqc {

/// SVG heatmap of the trial values. With a partition, every patch boundary is stroked in
/// its own colour.
void render_svg(std::ostream& out, const TrialGrid& trial, const Partition* patches = nullptr);

}  // namespace fieldqc
