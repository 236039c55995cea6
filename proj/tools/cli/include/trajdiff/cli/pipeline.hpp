#pragma once

// Glue between datasets, the model and the sampler, shared by the
// subcommands and the experiment drivers.

#include <cstddef>
#include <span>
#include <vector>

#include "trajdiff/diffusion.hpp"
#include "trajdiff/trajdata.hpp"

namespace trajdiff::cli {

// Header box when present, otherwise the tight box of all points.
BoundingBox dataset_box(const Dataset& dataset);

struct PreparedData {
  NormStats norm;
  GridSpec grid;
  TrainingSet set;
};

// Norm stats over `trajs`, then normalized [N, 2, length] tensors and their
// conditions.
PreparedData prepare_training(std::span<const RawTrajectory> trajs, const GridSpec& grid, std::size_t length,
                              const AttributeOptions& options = {});

std::vector<ConditionVector> conditions_for(std::span<const RawTrajectory> trajs, const GridSpec& grid,
                                            const NormStats& norm, const AttributeOptions& options = {});

// Denormalizes sampled trajectories. Sample i takes its point count, t0 and
// interval from templates[i] when templates are given; otherwise it keeps
// the model length.
std::vector<RawTrajectory> to_trajectories(const Tensor& samples, const NormStats& norm,
                                           std::span<const RawTrajectory> templates = {});

// Number of points outside the box grown by `margin` (fraction of its size).
std::size_t count_outside(std::span<const RawTrajectory> trajs, const BoundingBox& box, double margin);

}  // namespace trajdiff::cli
