#pragma once

// Training objective and reverse-process samplers (ancestral and skip-step),
// both with classifier-free guidance.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "trajdiff/condition.hpp"
#include "trajdiff/optimizer.hpp"
#include "trajdiff/rng.hpp"
#include "trajdiff/schedule.hpp"
#include "trajdiff/traj_unet.hpp"

namespace trajdiff {

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 2e-4;
  std::size_t steps = 3000;
  double cond_dropout_prob = 0.1;
  std::uint64_t seed = 0;
  double clip_norm = 0.0;

  void validate() const;
};

// Normalized trajectories [N, 2, L] with one condition each.
struct TrainingSet {
  Tensor trajectories;
  std::vector<ConditionVector> conditions;
};

struct TrainResult {
  std::vector<double> loss_history;
};

// Squared noise-prediction error summed over each sample and averaged over
// the batch. Steps are drawn uniformly from [1, T], noise from N(0, I), and
// each condition is swapped for the null condition with probability
// `cond_dropout_prob`. Tracked on the active tape.
Tensor training_loss(const NoisePredictor& model, const Tensor& x0, std::span<const ConditionVector> conds,
                     const NoiseSchedule& sched, RngStream& rng, double cond_dropout_prob);

using TrainCallback = std::function<void(std::size_t step, double loss)>;

// Mini-batch loop: sample batch, sample t and noise, descend the gradient.
// Throws NumericError as soon as a loss is non-finite.
TrainResult train(TrajUNet& model, const TrainingSet& data, const TrainConfig& config, const NoiseSchedule& sched,
                  const TrainCallback& on_step = {});

// Counts model evaluations, one per sample per forward pass.
struct EvalCounter {
  std::atomic<std::size_t> evals{0};
};

// (1 + omega) eps(x_t, t | c) - omega eps(x_t, t | null). With omega == 0
// only the conditional pass runs and its output is returned unchanged.
Tensor guided_eps(const NoisePredictor& model, const Tensor& x_t, std::span<const int> steps,
                  std::span<const ConditionVector> conds, double omega, EvalCounter* counter = nullptr);

// x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t) + sqrt(beta_tilde_t) z,
// with z ignored at t == 1. `z` may be undefined (treated as zero).
Tensor ddpm_update(const Tensor& x_t, std::size_t t, const Tensor& eps_hat, const Tensor& z,
                   const NoiseSchedule& sched);

// Jump from t to s < t:
// x_s = sqrt(abar_s) x0_hat + sqrt(1 - abar_s - sigma^2) eps + sigma z,
// sigma^2 = eta * jump_variance(t, s). Throws NumericError on a negative
// radicand.
Tensor ddim_update(const Tensor& x_t, std::size_t t, std::size_t s, const Tensor& eps_hat, double eta,
                   const Tensor& z, const NoiseSchedule& sched);

// Noise estimate re-derived from x0_hat clamped to [-bound, bound]:
// (x_t - sqrt(abar_t) clamp(x0_hat)) / sqrt(1 - abar_t). Elements whose x0_hat
// is already inside the bound keep eps_hat unchanged.
Tensor clamp_eps(const Tensor& x_t, std::size_t t, const Tensor& eps_hat, double bound, const NoiseSchedule& sched);

// Draws one [2, L]-shaped standard normal slab per sample from its stream.
Tensor draw_noise(const Shape& shape, std::span<RngStream> streams);

Tensor ddpm_step(const NoisePredictor& model, const Tensor& x_t, std::size_t t, std::span<const ConditionVector> conds,
                 double omega, const NoiseSchedule& sched, std::span<RngStream> streams,
                 EvalCounter* counter = nullptr, double clip_x0 = 0.0);

Tensor ddim_step(const NoisePredictor& model, const Tensor& x_t, std::size_t t, std::size_t s,
                 std::span<const ConditionVector> conds, double omega, double eta, const NoiseSchedule& sched,
                 std::span<RngStream> streams, EvalCounter* counter = nullptr, double clip_x0 = 0.0);

// tau_i = ceil(i * T / S), i = 1..S: strictly increasing, ends at T, stride
// T/S whenever S divides T.
std::vector<std::size_t> skip_timesteps(std::size_t total_steps, std::size_t sample_steps);

struct SamplerConfig {
  std::size_t sample_steps = 20;
  double eta = 0.0;
  double guidance_scale = 3.0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t batch_size = 64;
  // Clamp x0_hat to [-clip_x0, clip_x0] before each update; 0 disables.
  // Normalized trajectories live in [-1, 1].
  double clip_x0 = 0.0;

  void validate(std::size_t total_steps) const;
};

struct SampleResult {
  Tensor trajectories;  // [N, channels, length], normalized coordinates
  std::size_t model_evals = 0;
};

// Draws x_T ~ N(0, I) and runs the reverse chain over the skip subsequence
// (the ancestral sampler when S == T and eta == 1). Sample i uses random
// stream (seed, i), so output is independent of worker count and batching.
SampleResult sample(const NoisePredictor& model, std::span<const ConditionVector> conds, const SamplerConfig& config,
                    const NoiseSchedule& sched, std::size_t length, std::size_t channels = 2);

}  // namespace trajdiff
