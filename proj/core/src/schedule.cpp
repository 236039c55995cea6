#include "trajdiff/schedule.hpp"

#include <cmath>
#include <string>

#include "trajdiff/error.hpp"

namespace trajdiff {

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
  if (steps == 0) throw ArgumentError("noise schedule needs at least one step");
  const bool bounds_ok = beta_start > 0.0 && beta_end < 1.0 &&
                         (steps == 1 ? beta_start <= beta_end : beta_start < beta_end);
  if (!bounds_ok) {
    throw ArgumentError("noise schedule needs 0 < beta_start < beta_end < 1, got " + std::to_string(beta_start) +
                        " .. " + std::to_string(beta_end));
  }

  NoiseSchedule s;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  s.beta_.resize(steps);
  s.alpha_.resize(steps);
  s.alpha_bar_.resize(steps);
  s.beta_tilde_.resize(steps);

  double running = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    s.beta_[i] = i + 1 == steps ? beta_end : beta_start + (beta_end - beta_start) * frac;
    s.alpha_[i] = 1.0 - s.beta_[i];
    running *= s.alpha_[i];
    s.alpha_bar_[i] = running;
    s.beta_tilde_[i] = i == 0 ? s.beta_[0] : (1.0 - s.alpha_bar_[i - 1]) / (1.0 - s.alpha_bar_[i]) * s.beta_[i];
  }

  for (std::size_t i = 1; i < steps; ++i) {
    if (!(s.beta_[i] > s.beta_[i - 1]) || !(s.alpha_bar_[i] < s.alpha_bar_[i - 1])) {
      throw NumericError("noise schedule is not strictly monotone at step " + std::to_string(i + 1));
    }
  }
  return s;
}

void NoiseSchedule::check_step(std::size_t t) const {
  if (t < 1 || t > steps()) {
    throw ArgumentError("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }
}

double NoiseSchedule::beta(std::size_t t) const {
  check_step(t);
  return beta_[t - 1];
}

double NoiseSchedule::alpha(std::size_t t) const {
  check_step(t);
  return alpha_[t - 1];
}

double NoiseSchedule::alpha_bar(std::size_t t) const {
  if (t == 0) return 1.0;
  check_step(t);
  return alpha_bar_[t - 1];
}

double NoiseSchedule::beta_tilde(std::size_t t) const {
  check_step(t);
  return beta_tilde_[t - 1];
}

double NoiseSchedule::jump_variance(std::size_t t, std::size_t s) const {
  check_step(t);
  if (s >= t) throw ArgumentError("jump_variance needs s < t");
  if (s + 1 == t && s > 0) return beta_tilde_[t - 1];
  const double ab_t = alpha_bar(t);
  const double ab_s = alpha_bar(s);
  return (1.0 - ab_s) / (1.0 - ab_t) * (1.0 - ab_t / ab_s);
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// out = ca * a + cb * b elementwise, computed in double.
Tensor combine(const Tensor& a, double ca, const Tensor& b, double cb) {
  Tensor out = Tensor::zeros(a.shape());
  auto y = out.mutable_data();
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<float>(ca * av[i] + cb * bv[i]);
  return out;
}

}  // namespace

Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched) {
  require_same(x0, eps, "q_sample");
  sched.check_step(t);
  const double ab = sched.alpha_bar(t);
  return combine(x0, std::sqrt(ab), eps, std::sqrt(1.0 - ab));
}

Tensor q_sample(const Tensor& x0, std::span<const int> steps, const Tensor& eps, const NoiseSchedule& sched) {
  require_same(x0, eps, "q_sample");
  if (x0.rank() == 0 || steps.size() != x0.dim(0)) throw ShapeError("q_sample: one step per sample required");
  const std::size_t per = x0.numel() / x0.dim(0);
  Tensor out = Tensor::zeros(x0.shape());
  auto y = out.mutable_data();
  for (std::size_t n = 0; n < steps.size(); ++n) {
    if (steps[n] < 1) throw ArgumentError("q_sample: step must be >= 1");
    const double ab = sched.alpha_bar(static_cast<std::size_t>(steps[n]));
    const double ca = std::sqrt(ab), cb = std::sqrt(1.0 - ab);
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      y[i] = static_cast<float>(ca * x0.data()[i] + cb * eps.data()[i]);
    }
  }
  return out;
}

PosteriorCoefficients posterior_coefficients(std::size_t t, const NoiseSchedule& sched) {
  sched.check_step(t);
  const double ab_t = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t - 1);
  return {std::sqrt(ab_prev) * sched.beta(t) / (1.0 - ab_t),
          std::sqrt(sched.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab_t)};
}

PosteriorStats posterior_mean(const Tensor& x0, const Tensor& xt, std::size_t t, const NoiseSchedule& sched) {
  require_same(x0, xt, "posterior_mean");
  const PosteriorCoefficients c = posterior_coefficients(t, sched);
  return {combine(x0, c.x0, xt, c.xt), sched.beta_tilde(t)};
}

Tensor predict_x0_from_eps(const Tensor& xt, std::size_t t, const Tensor& eps, const NoiseSchedule& sched) {
  require_same(xt, eps, "predict_x0_from_eps");
  sched.check_step(t);
  const double ab = sched.alpha_bar(t);
  const double inv = 1.0 / std::sqrt(ab);
  return combine(xt, inv, eps, -std::sqrt(1.0 - ab) * inv);
}

Tensor reverse_mean_from_eps(const Tensor& xt, std::size_t t, const Tensor& eps, const NoiseSchedule& sched) {
  require_same(xt, eps, "reverse_mean_from_eps");
  sched.check_step(t);
  const double inv = 1.0 / std::sqrt(sched.alpha(t));
  return combine(xt, inv, eps, -sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t)) * inv);
}

}  // namespace trajdiff
