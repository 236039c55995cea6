#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "trajdiff/tensor.hpp"

namespace trajdiff {

inline constexpr std::size_t kNumericAttributes = 4;
inline constexpr int kDepartureSlots = 288;

// Motion attributes (z-scored) plus categorical context for one trajectory.
// Numeric order: travel distance, average move distance, travel time,
// raw point count.
struct ConditionVector {
  std::array<float, kNumericAttributes> numeric{};
  int departure_slot = 0;
  int origin_cell = 0;
  int destination_cell = 0;
  bool is_null = false;

  // The zero-information condition used by the unconditional branch.
  static ConditionVector null() {
    ConditionVector c;
    c.is_null = true;
    return c;
  }

  friend bool operator==(const ConditionVector&, const ConditionVector&) = default;
};

// Anything that maps (x_t, t, condition) to a noise estimate of x_t's shape.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;

  // x_t [B, 2, L]; one step and one condition per sample.
  [[nodiscard]] virtual Tensor predict(const Tensor& x_t, std::span<const int> steps,
                                       std::span<const ConditionVector> conds) const = 0;
};

}  // namespace trajdiff
