#include "trajdiff/cli/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "trajdiff/error.hpp"

namespace trajdiff::cli {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string open_svg(double w, double h) {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) +
         "\" height=\"" + num(h) + "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\">\n";
}

}  // namespace

double svg_height(const BoundingBox& box, double width) {
  if (!box.valid()) throw DataError("svg: degenerate bounding box");
  return width * (box.lat_max - box.lat_min) / (box.lng_max - box.lng_min);
}

std::string render_lines(std::span<const RawTrajectory> trajs, const BoundingBox& box, const SvgOptions& options) {
  if (trajs.empty()) throw DataError("plot: empty dataset");
  const double w = options.width;
  const double h = svg_height(box, w);
  std::string out = open_svg(w, h);
  out += "<g fill=\"none\" stroke=\"" + options.stroke + "\" stroke-width=\"" + num(options.stroke_width) +
         "\" stroke-opacity=\"0.5\">\n";
  for (const auto& t : trajs) {
    out += "<polyline points=\"";
    for (std::size_t i = 0; i < t.points.size(); ++i) {
      const double x = (t.points[i].lng - box.lng_min) / (box.lng_max - box.lng_min) * w;
      const double y = h - (t.points[i].lat - box.lat_min) / (box.lat_max - box.lat_min) * h;
      if (i) out += ' ';
      out += num(x) + "," + num(y);
    }
    out += "\"/>\n";
  }
  out += "</g>\n</svg>\n";
  return out;
}

std::string render_heatmap(const Distribution& density, const GridSpec& grid, const SvgOptions& options) {
  if (density.size() != grid.cells()) throw ArgumentError("heatmap: density does not match the grid");
  const double peak = density.p.empty() ? 0.0 : *std::max_element(density.p.begin(), density.p.end());
  if (!(peak > 0.0)) throw DataError("plot: empty dataset");
  const double w = options.width;
  const double h = svg_height(grid.box, w);
  const double cw = w / static_cast<double>(grid.cols);
  const double ch = h / static_cast<double>(grid.rows);
  std::string out = open_svg(w, h);
  out += "<g fill=\"" + options.fill + "\">\n";
  for (std::size_t cell = 0; cell < grid.cells(); ++cell) {
    const double d = density.p[cell];
    if (!(d > 0.0)) continue;
    const double level = std::round(255.0 * d / peak) / 255.0;
    char op[32];
    std::snprintf(op, sizeof op, "%.6f", level);
    const double x = static_cast<double>(grid.col_of(cell)) * cw;
    const double y = h - static_cast<double>(grid.row_of(cell) + 1) * ch;
    out += "<rect class=\"cell\" x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(cw) + "\" height=\"" +
           num(ch) + "\" fill-opacity=\"" + op + "\"/>\n";
  }
  out += "</g>\n</svg>\n";
  return out;
}

}  // namespace trajdiff::cli
