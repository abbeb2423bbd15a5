#include "fieldqc/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

namespace fieldqc {

namespace {

constexpr int kCell = 20;

/// Blue-white-red ramp on t in [0,1].
std::string ramp(double t) {
  const double a = std::clamp(t, 0.0, 1.0);
  const auto mix = [](double x, double y, double u) { return static_cast<int>(std::lround(x + (y - x) * u)); };
  int r, g, b;
  if (a < 0.5) {
    const double u = a / 0.5;
    r = mix(33, 247, u), g = mix(102, 247, u), b = mix(172, 247, u);
  } else {
    const double u = (a - 0.5) / 0.5;
    r = mix(247, 178, u), g = mix(247, 24, u), b = mix(247, 43, u);
  }
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

/// Distinct hues spaced by the golden angle.
std::string patch_colour(int k) {
  const double h = std::fmod(k * 137.50776, 360.0) / 60.0;
  const double c = 0.75, x = c * (1 - std::abs(std::fmod(h, 2.0) - 1)), m = 0.1;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround((r + m) * 255)),
                static_cast<int>(std::lround((g + m) * 255)),
                static_cast<int>(std::lround((b + m) * 255)));
  return buf;
}

}  // namespace

void render_svg(std::ostream& out, const TrialGrid& trial, const Partition* patches) {
  const auto& shape = trial.shape();
  const int w = shape.cols() * kCell, h = shape.rows() * kCell;
  double lo = 0, hi = 0;
  bool first = true;
  for (const auto& c : shape.present()) {
    const double v = trial.value(c);
    if (!std::isfinite(v)) continue;
    lo = first ? v : std::min(lo, v);
    hi = first ? v : std::max(hi, v);
    first = false;
  }
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n";
  out << "<g class=\"cells\">\n";
  for (const auto& c : shape.present()) {
    const double t = hi > lo ? (trial.value(c) - lo) / (hi - lo) : 0.5;
    out << "<rect x=\"" << c.j * kCell << "\" y=\"" << c.i * kCell << "\" width=\"" << kCell
        << "\" height=\"" << kCell << "\" fill=\"" << ramp(t) << "\"/>\n";
  }
  out << "</g>\n";
  if (patches) {
    const auto labels = patches->labels(shape);
    auto label = [&](int i, int j) {
      return shape.in_bounds({i, j}) ? labels[shape.index({i, j})] : -1;
    };
    for (std::size_t k = 0; k < patches->patches.size(); ++k) {
      const auto& p = patches->patches[k];
      out << "<path class=\"patch\" data-patch=\"" << p.id << "\" fill=\"none\" stroke=\""
          << patch_colour(static_cast<int>(k)) << "\" stroke-width=\"3\" d=\"";
      for (const auto& c : p.coords) {
        const int x = c.j * kCell, y = c.i * kCell;
        if (label(c.i - 1, c.j) != p.id) out << 'M' << x << ' ' << y << 'h' << kCell;
        if (label(c.i + 1, c.j) != p.id) out << 'M' << x << ' ' << y + kCell << 'h' << kCell;
        if (label(c.i, c.j - 1) != p.id) out << 'M' << x << ' ' << y << 'v' << kCell;
        if (label(c.i, c.j + 1) != p.id) out << 'M' << x + kCell << ' ' << y << 'v' << kCell;
      }
      out << "\"/>\n";
    }
  }
  out << "</svg>\n";
}

}  // namespace fieldqc
