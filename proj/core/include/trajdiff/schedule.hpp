#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "trajdiff/tensor.hpp"

namespace trajdiff {

// Precomputed linear variance schedule. Step indices in the public API are
// 1-based (t in [1, T]); storage is 0-based. Index 0 of the *_at accessors
// refers to the clean-data end of the chain (alpha_bar = 1).
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  static NoiseSchedule linear(std::size_t steps, double beta_start, double beta_end);

  [[nodiscard]] std::size_t steps() const { return beta_.size(); }
  [[nodiscard]] double beta_start() const { return beta_start_; }
  [[nodiscard]] double beta_end() const { return beta_end_; }

  [[nodiscard]] double beta(std::size_t t) const;
  [[nodiscard]] double alpha(std::size_t t) const;
  // alpha_bar(0) == 1.
  [[nodiscard]] double alpha_bar(std::size_t t) const;
  // beta_tilde(1) == beta(1).
  [[nodiscard]] double beta_tilde(std::size_t t) const;

  // Posterior variance of a jump from t down to s < t:
  // (1 - abar_s) / (1 - abar_t) * (1 - abar_t / abar_s).
  // Equals beta_tilde(t) for s = t - 1 > 0, and 0 for s = 0.
  [[nodiscard]] double jump_variance(std::size_t t, std::size_t s) const;

  [[nodiscard]] const std::vector<double>& betas() const { return beta_; }
  [[nodiscard]] const std::vector<double>& alpha_bars() const { return alpha_bar_; }
  [[nodiscard]] const std::vector<double>& beta_tildes() const { return beta_tilde_; }

  // Throws ArgumentError unless 1 <= t <= T.
  void check_step(std::size_t t) const;

 private:
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  std::vector<double> beta_tilde_;
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, one t for the whole batch.
Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched);

// Per-sample steps along the leading axis of x0. Not tracked on the tape.
Tensor q_sample(const Tensor& x0, std::span<const int> steps, const Tensor& eps, const NoiseSchedule& sched);

// Coefficients (of x0, of x_t) in the posterior mean of q(x_{t-1} | x_t, x_0).
struct PosteriorCoefficients {
  double x0 = 0.0;
  double xt = 0.0;
};
PosteriorCoefficients posterior_coefficients(std::size_t t, const NoiseSchedule& sched);

struct PosteriorStats {
  Tensor mean;
  double variance = 0.0;
};

// Mean and variance of q(x_{t-1} | x_t, x_0).
PosteriorStats posterior_mean(const Tensor& x0, const Tensor& xt, std::size_t t, const NoiseSchedule& sched);

// x0 = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t).
Tensor predict_x0_from_eps(const Tensor& xt, std::size_t t, const Tensor& eps, const NoiseSchedule& sched);

// Direct noise-parameterized reverse mean:
// (x_t - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t).
Tensor reverse_mean_from_eps(const Tensor& xt, std::size_t t, const Tensor& eps, const NoiseSchedule& sched);

}  // namespace trajdiff
