#include "trajdiff/cli/pipeline.hpp"

#include "trajdiff/error.hpp"

namespace trajdiff::cli {

BoundingBox dataset_box(const Dataset& dataset) {
  if (dataset.header && dataset.header->bbox) return *dataset.header->bbox;
  const BoundingBox box = bounding_box(dataset.trajectories);
  if (!box.valid()) throw DataError("dataset bounding box is degenerate");
  return box;
}

std::vector<ConditionVector> conditions_for(std::span<const RawTrajectory> trajs, const GridSpec& grid,
                                            const NormStats& norm, const AttributeOptions& options) {
  std::vector<ConditionVector> out;
  out.reserve(trajs.size());
  for (const auto& t : trajs) out.push_back(extract_attributes(t, grid, norm, options));
  return out;
}

PreparedData prepare_training(std::span<const RawTrajectory> trajs, const GridSpec& grid, std::size_t length,
                              const AttributeOptions& options) {
  if (trajs.empty()) throw DataError("no training trajectories");
  PreparedData p;
  p.grid = grid;
  p.norm = compute_norm_stats(trajs, grid.box, grid, options);
  p.set.trajectories = normalize(trajs, p.norm, length);
  p.set.conditions = conditions_for(trajs, grid, p.norm, options);
  return p;
}

std::vector<RawTrajectory> to_trajectories(const Tensor& samples, const NormStats& norm,
                                           std::span<const RawTrajectory> templates) {
  const std::size_t n = samples.dim(0);
  if (!templates.empty() && templates.size() != n) {
    throw ArgumentError("to_trajectories: one template per sample required");
  }
  std::vector<RawTrajectory> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    RawTrajectory& t = out[i];
    t.id = "g" + std::to_string(i);
    t.points = denormalize(samples, i, norm);
    if (!templates.empty()) {
      const RawTrajectory& tpl = templates[i];
      if (tpl.points.size() >= 2 && tpl.points.size() != t.points.size()) t.points = resample(t.points, tpl.points.size());
      t.t0 = tpl.t0;
      t.interval_s = tpl.interval_s;
    }
  }
  return out;
}

std::size_t count_outside(std::span<const RawTrajectory> trajs, const BoundingBox& box, double margin) {
  const BoundingBox grown = box.expanded(margin);
  std::size_t n = 0;
  for (const auto& t : trajs) {
    for (const auto& p : t.points) n += grown.contains(p) ? 0 : 1;
  }
  return n;
}

}  // namespace trajdiff::cli
