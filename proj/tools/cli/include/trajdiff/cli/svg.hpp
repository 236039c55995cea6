#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "trajdiff/metrics.hpp"
#include "trajdiff/trajdata.hpp"

namespace trajdiff::cli {

struct SvgOptions {
  double width = 800.0;
  double stroke_width = 0.6;
  std::string stroke = "#1f4e79";
  std::string fill = "#c0392b";
};

// Canvas height for a box at the given width (plate carree).
double svg_height(const BoundingBox& box, double width);

// One <polyline> per trajectory.
std::string render_lines(std::span<const RawTrajectory> trajs, const BoundingBox& box, const SvgOptions& options = {});

// One <rect class="cell"> per nonempty cell, fill-opacity round(255 d / max) / 255.
std::string render_heatmap(const Distribution& density, const GridSpec& grid, const SvgOptions& options = {});

}  // namespace trajdiff::cli
