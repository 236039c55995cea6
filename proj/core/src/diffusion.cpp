#include "trajdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include "trajdiff/error.hpp"

namespace trajdiff {

namespace {

Tensor concat_batch(const Tensor& a, const Tensor& b) {
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<float> values(a.data().begin(), a.data().end());
  values.insert(values.end(), b.data().begin(), b.data().end());
  return Tensor::from(std::move(shape), std::move(values));
}

std::size_t per_sample(const Tensor& x) { return x.dim(0) == 0 ? 0 : x.numel() / x.dim(0); }

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ArgumentError("batch size must be positive");
  if (!(learning_rate > 0.0)) throw ArgumentError("learning rate must be positive");
  if (!(cond_dropout_prob >= 0.0 && cond_dropout_prob <= 1.0)) {
    throw ArgumentError("condition dropout probability must lie in [0, 1]");
  }
}

Tensor training_loss(const NoisePredictor& model, const Tensor& x0, std::span<const ConditionVector> conds,
                     const NoiseSchedule& sched, RngStream& rng, double cond_dropout_prob) {
  if (x0.rank() == 0 || x0.dim(0) == 0) throw ArgumentError("training_loss: empty batch");
  const std::size_t B = x0.dim(0);
  if (conds.size() != B) throw ShapeError("training_loss: one condition per trajectory required");
  const std::size_t per = per_sample(x0);

  std::vector<int> steps(B);
  std::vector<ConditionVector> used(conds.begin(), conds.end());
  Tensor eps = Tensor::zeros(x0.shape());
  auto ev = eps.mutable_data();
  for (std::size_t n = 0; n < B; ++n) {
    steps[n] = static_cast<int>(1 + rng.below(sched.steps()));
    if (rng.uniform() < cond_dropout_prob) used[n] = ConditionVector::null();
    for (std::size_t i = 0; i < per; ++i) ev[n * per + i] = static_cast<float>(rng.normal());
  }
  const Tensor x_t = q_sample(x0, steps, eps, sched);
  const Tensor pred = model.predict(x_t, steps, used);
  return scale(mse(pred, eps), static_cast<float>(per));
}

TrainResult train(TrajUNet& model, const TrainingSet& data, const TrainConfig& config, const NoiseSchedule& sched,
                  const TrainCallback& on_step) {
  config.validate();
  const Tensor& all = data.trajectories;
  if (!all.defined() || all.rank() != 3 || all.dim(0) == 0) throw ArgumentError("train: empty dataset");
  if (data.conditions.size() != all.dim(0)) throw ShapeError("train: one condition per trajectory required");
  if (all.dim(2) != model.config().length) {
    throw ShapeError("train: trajectories have length " + std::to_string(all.dim(2)) + ", model expects " +
                     std::to_string(model.config().length));
  }

  AdamConfig adam_cfg;
  adam_cfg.learning_rate = config.learning_rate;
  adam_cfg.clip_norm = config.clip_norm;
  Adam adam(model.params(), adam_cfg);
  RngStream rng(config.seed, 0x7a11);

  const std::size_t N = all.dim(0), per = per_sample(all), B = config.batch_size;
  TrainResult result;
  result.loss_history.reserve(config.steps);
  std::vector<float> batch_values(B * per);
  std::vector<ConditionVector> batch_conds(B);

  for (std::size_t step = 0; step < config.steps; ++step) {
    for (std::size_t n = 0; n < B; ++n) {
      const std::size_t idx = rng.below(N);
      std::copy_n(all.data().begin() + static_cast<std::ptrdiff_t>(idx * per), per,
                  batch_values.begin() + static_cast<std::ptrdiff_t>(n * per));
      batch_conds[n] = data.conditions[idx];
    }
    const Tensor x0 = Tensor::from({B, all.dim(1), all.dim(2)}, batch_values);

    model.params().zero_grad();
    Tape tape;
    double loss_value = 0.0;
    {
      TapeScope scope(tape);
      const Tensor loss = training_loss(model, x0, batch_conds, sched, rng, config.cond_dropout_prob);
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw NumericError("training loss became non-finite at step " + std::to_string(step + 1));
      }
      tape.backward(loss);
    }
    adam.step();
    result.loss_history.push_back(loss_value);
    if (on_step) on_step(step + 1, loss_value);
  }
  return result;
}

Tensor guided_eps(const NoisePredictor& model, const Tensor& x_t, std::span<const int> steps,
                  std::span<const ConditionVector> conds, double omega, EvalCounter* counter) {
  const std::size_t B = x_t.dim(0);
  if (omega == 0.0) {
    Tensor out = model.predict(x_t, steps, conds);
    if (counter) counter->evals += B;
    return out;
  }

  // Conditional and null branches ride in one batch of 2B.
  std::vector<int> steps2(steps.begin(), steps.end());
  steps2.insert(steps2.end(), steps.begin(), steps.end());
  std::vector<ConditionVector> conds2(conds.begin(), conds.end());
  conds2.resize(2 * B, ConditionVector::null());
  const Tensor both = model.predict(concat_batch(x_t, x_t), steps2, conds2);
  if (counter) counter->evals += 2 * B;

  const std::size_t half = both.numel() / 2;
  Tensor out = Tensor::zeros(x_t.shape());
  auto y = out.mutable_data();
  auto v = both.data();
  for (std::size_t i = 0; i < half; ++i) {
    y[i] = static_cast<float>((1.0 + omega) * v[i] - omega * v[half + i]);
  }
  return out;
}

Tensor ddpm_update(const Tensor& x_t, std::size_t t, const Tensor& eps_hat, const Tensor& z,
                   const NoiseSchedule& sched) {
  if (x_t.shape() != eps_hat.shape()) throw ShapeError("ddpm_update: eps shape mismatch");
  sched.check_step(t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  const double eps_coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
  const bool noisy = t > 1 && z.defined();
  if (noisy && z.shape() != x_t.shape()) throw ShapeError("ddpm_update: z shape mismatch");
  const double sigma = noisy ? std::sqrt(sched.beta_tilde(t)) : 0.0;

  Tensor out = Tensor::zeros(x_t.shape());
  auto y = out.mutable_data();
  auto x = x_t.data();
  auto e = eps_hat.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    double v = inv_sqrt_alpha * (x[i] - eps_coef * e[i]);
    if (noisy) v += sigma * z.data()[i];
    y[i] = static_cast<float>(v);
  }
  return out;
}

Tensor ddim_update(const Tensor& x_t, std::size_t t, std::size_t s, const Tensor& eps_hat, double eta,
                   const Tensor& z, const NoiseSchedule& sched) {
  if (x_t.shape() != eps_hat.shape()) throw ShapeError("ddim_update: eps shape mismatch");
  sched.check_step(t);
  if (s >= t) throw ArgumentError("ddim_update: target step must precede the current one");
  if (eta < 0.0) throw ArgumentError("ddim_update: eta must be non-negative");

  const double ab_t = sched.alpha_bar(t);
  const double ab_s = sched.alpha_bar(s);
  const double sigma2 = eta * sched.jump_variance(t, s);
  double radicand = 1.0 - ab_s - sigma2;
  if (radicand < 0.0) {
    if (radicand < -1e-12) {
      throw NumericError("ddim_update: eta " + std::to_string(eta) + " too large for the jump " + std::to_string(t) +
                         " -> " + std::to_string(s));
    }
    radicand = 0.0;
  }
  const bool noisy = sigma2 > 0.0 && z.defined();
  if (noisy && z.shape() != x_t.shape()) throw ShapeError("ddim_update: z shape mismatch");

  const double inv_sqrt_ab = 1.0 / std::sqrt(ab_t);
  const double sqrt_one_minus_ab = std::sqrt(1.0 - ab_t);
  const double c_x0 = std::sqrt(ab_s);
  const double c_eps = std::sqrt(radicand);
  const double sigma = std::sqrt(sigma2);

  Tensor out = Tensor::zeros(x_t.shape());
  auto y = out.mutable_data();
  auto x = x_t.data();
  auto e = eps_hat.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double x0_hat = (x[i] - sqrt_one_minus_ab * e[i]) * inv_sqrt_ab;
    double v = c_x0 * x0_hat + c_eps * e[i];
    if (noisy) v += sigma * z.data()[i];
    y[i] = static_cast<float>(v);
  }
  return out;
}

Tensor clamp_eps(const Tensor& x_t, std::size_t t, const Tensor& eps_hat, double bound, const NoiseSchedule& sched) {
  if (x_t.shape() != eps_hat.shape()) throw ShapeError("clamp_eps: eps shape mismatch");
  if (!(bound > 0.0)) throw ArgumentError("clamp_eps: bound must be positive");
  sched.check_step(t);
  const double sqrt_ab = std::sqrt(sched.alpha_bar(t));
  const double sqrt_one_minus_ab = std::sqrt(1.0 - sched.alpha_bar(t));
  Tensor out = eps_hat.clone();
  auto y = out.mutable_data();
  auto x = x_t.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double x0_hat = (x[i] - sqrt_one_minus_ab * y[i]) / sqrt_ab;
    if (std::abs(x0_hat) <= bound) continue;
    y[i] = static_cast<float>((x[i] - sqrt_ab * std::clamp(x0_hat, -bound, bound)) / sqrt_one_minus_ab);
  }
  return out;
}

Tensor draw_noise(const Shape& shape, std::span<RngStream> streams) {
  if (shape.empty() || shape[0] != streams.size()) throw ShapeError("draw_noise: one stream per sample required");
  Tensor out = Tensor::zeros(shape);
  const std::size_t per = shape[0] == 0 ? 0 : out.numel() / shape[0];
  auto y = out.mutable_data();
  for (std::size_t n = 0; n < streams.size(); ++n) {
    for (std::size_t i = 0; i < per; ++i) y[n * per + i] = static_cast<float>(streams[n].normal());
  }
  return out;
}

Tensor ddpm_step(const NoisePredictor& model, const Tensor& x_t, std::size_t t, std::span<const ConditionVector> conds,
                 double omega, const NoiseSchedule& sched, std::span<RngStream> streams, EvalCounter* counter,
                 double clip_x0) {
  sched.check_step(t);
  const std::vector<int> steps(x_t.dim(0), static_cast<int>(t));
  Tensor eps = guided_eps(model, x_t, steps, conds, omega, counter);
  if (clip_x0 > 0.0) eps = clamp_eps(x_t, t, eps, clip_x0, sched);
  const Tensor z = t > 1 ? draw_noise(x_t.shape(), streams) : Tensor();
  return ddpm_update(x_t, t, eps, z, sched);
}

Tensor ddim_step(const NoisePredictor& model, const Tensor& x_t, std::size_t t, std::size_t s,
                 std::span<const ConditionVector> conds, double omega, double eta, const NoiseSchedule& sched,
                 std::span<RngStream> streams, EvalCounter* counter, double clip_x0) {
  sched.check_step(t);
  if (s >= t) throw ArgumentError("ddim_step: target step must precede the current one");
  const std::vector<int> steps(x_t.dim(0), static_cast<int>(t));
  Tensor eps = guided_eps(model, x_t, steps, conds, omega, counter);
  if (clip_x0 > 0.0) eps = clamp_eps(x_t, t, eps, clip_x0, sched);
  const bool noisy = eta * sched.jump_variance(t, s) > 0.0;
  const Tensor z = noisy ? draw_noise(x_t.shape(), streams) : Tensor();
  return ddim_update(x_t, t, s, eps, eta, z, sched);
}

std::vector<std::size_t> skip_timesteps(std::size_t total_steps, std::size_t sample_steps) {
  if (sample_steps == 0 || sample_steps > total_steps) {
    throw ArgumentError("sample steps " + std::to_string(sample_steps) + " must lie in [1, " +
                        std::to_string(total_steps) + "]");
  }
  std::vector<std::size_t> tau(sample_steps);
  for (std::size_t i = 1; i <= sample_steps; ++i) {
    tau[i - 1] = (i * total_steps + sample_steps - 1) / sample_steps;
  }
  return tau;
}

void SamplerConfig::validate(std::size_t total_steps) const {
  if (sample_steps == 0 || sample_steps > total_steps) {
    throw ArgumentError("sample steps " + std::to_string(sample_steps) + " must lie in [1, " +
                        std::to_string(total_steps) + "]");
  }
  if (eta < 0.0) throw ArgumentError("eta must be non-negative");
  if (batch_size == 0) throw ArgumentError("sampler batch size must be positive");
  if (clip_x0 < 0.0) throw ArgumentError("x0 clamp bound must be non-negative");
}

SampleResult sample(const NoisePredictor& model, std::span<const ConditionVector> conds, const SamplerConfig& config,
                    const NoiseSchedule& sched, std::size_t length, std::size_t channels) {
  config.validate(sched.steps());
  const std::size_t N = conds.size();
  const std::size_t per = channels * length;
  const auto tau = skip_timesteps(sched.steps(), config.sample_steps);
  const bool ancestral = config.sample_steps == sched.steps() && config.eta == 1.0;

  SampleResult result;
  result.trajectories = Tensor::zeros({N, channels, length});
  EvalCounter counter;

  auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t start = begin; start < end; start += config.batch_size) {
      const std::size_t stop = std::min(end, start + config.batch_size);
      const std::size_t B = stop - start;
      std::vector<RngStream> streams;
      streams.reserve(B);
      for (std::size_t i = start; i < stop; ++i) streams.emplace_back(config.seed, i);
      const auto batch_conds = conds.subspan(start, B);

      Tensor x = draw_noise({B, channels, length}, streams);
      for (std::size_t i = tau.size(); i >= 1; --i) {
        const std::size_t t = tau[i - 1];
        const std::size_t s = i > 1 ? tau[i - 2] : 0;
        x = ancestral ? ddpm_step(model, x, t, batch_conds, config.guidance_scale, sched, streams, &counter,
                                  config.clip_x0)
                      : ddim_step(model, x, t, s, batch_conds, config.guidance_scale, config.eta, sched, streams,
                                  &counter, config.clip_x0);
      }
      std::copy(x.data().begin(), x.data().end(),
                result.trajectories.mutable_data().begin() + static_cast<std::ptrdiff_t>(start * per));
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(config.workers, N));
  if (workers == 1) {
    run_range(0, N);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> threads;
    const std::size_t chunk = (N + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = std::min(N, w * chunk), end = std::min(N, begin + chunk);
      threads.emplace_back([&, w, begin, end]() {
        try {
          run_range(begin, end);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : threads) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  result.model_evals = counter.evals.load();
  return result;
}

}  // namespace trajdiff
