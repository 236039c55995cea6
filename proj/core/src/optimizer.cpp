#include "trajdiff/optimizer.hpp"

#include <cmath>

#include "trajdiff/error.hpp"

namespace trajdiff {

Adam::Adam(ParamStore& params, AdamConfig config) : params_(&params), config_(config) {
  if (!(config_.learning_rate > 0.0)) throw ArgumentError("learning rate must be positive");
  for (const auto& e : params_->entries()) {
    m_.emplace_back(e.tensor.numel(), 0.0f);
    v_.emplace_back(e.tensor.numel(), 0.0f);
  }
}

double Adam::step() {
  ++iterations_;
  const auto& entries = params_->entries();

  double sq = 0.0;
  for (const auto& e : entries) {
    for (float g : e.tensor.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  const double clip = (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(iterations_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(iterations_));
  const double step_size = config_.learning_rate * std::sqrt(c2) / c1;

  for (std::size_t p = 0; p < entries.size(); ++p) {
    Tensor param = entries[p].tensor;
    const auto grad = param.grad();
    if (grad.empty()) continue;  // unused in this forward pass
    auto value = param.mutable_data();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i] * clip;
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * g * g);
      value[i] -= static_cast<float>(step_size * m[i] / (std::sqrt(static_cast<double>(v[i])) + config_.epsilon));
    }
  }
  return norm;
}

}  // namespace trajdiff
