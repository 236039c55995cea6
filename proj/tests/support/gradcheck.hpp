#pragma once

// Central finite-difference gradient checker shared by the unit and
// acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "trajdiff/rng.hpp"
#include "trajdiff/tensor.hpp"

namespace trajdiff::testing {

inline Tensor random_tensor(Shape shape, RngStream& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(scale * rng.normal());
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // name of the input with the largest error
  std::size_t probes = 0;
};

// loss = sum_i w_i * f(inputs)_i with fixed Gaussian weights w, accumulated in
// double. Compares the tape gradient of every input against
// (loss(x + h e_k) - loss(x - h e_k)) / 2h on up to `max_probes` coordinates
// per input; the error of an input is ||analytic - numeric|| / max(norms, floor).
inline GradCheckResult grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                  std::vector<Tensor> inputs, const std::vector<std::string>& names,
                                  double h = 1e-3, std::size_t max_probes = 48, std::uint64_t seed = 99) {
  RngStream rng(seed, 1);
  std::vector<double> weights;
  auto loss_value = [&](const Tensor& out) {
    if (weights.empty()) {
      weights.resize(out.numel());
      for (auto& w : weights) w = rng.normal();
    }
    double acc = 0.0;
    const auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) acc += weights[i] * static_cast<double>(d[i]);
    return acc;
  };

  // Analytic pass.
  for (auto& t : inputs) t.zero_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    const Tensor out = f(inputs);
    loss_value(out);
    std::vector<float> wf(weights.begin(), weights.end());
    const Tensor loss = sum(mul(out, Tensor::from(out.shape(), wf)));
    tape.backward(loss);
  }

  auto central = [&](Tensor& x, std::size_t i, double step) {
    const float orig = x.data()[i];
    x.mutable_data()[i] = static_cast<float>(orig + step);
    const double up = static_cast<double>(x.data()[i]);
    const double lp = loss_value(f(inputs));
    x.mutable_data()[i] = static_cast<float>(orig - step);
    const double dn = static_cast<double>(x.data()[i]);
    const double lm = loss_value(f(inputs));
    x.mutable_data()[i] = orig;
    return (lp - lm) / (up - dn);
  };

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& x = inputs[k];
    if (!x.requires_grad()) continue;
    std::vector<float> analytic(x.numel(), 0.0f);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

    std::vector<std::size_t> idx(x.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > max_probes) {
      RngStream pick(seed, 1000 + k);
      for (std::size_t i = 0; i < max_probes; ++i) std::swap(idx[i], idx[i + pick.below(idx.size() - i)]);
      idx.resize(max_probes);
    }

    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (const std::size_t i : idx) {
      const double a = analytic[i];
      const double n = central(x, i, h);
      diff2 += (a - n) * (a - n);
      a2 += a * a;
      n2 += n * n;
      ++result.probes;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-6});
    const double rel = std::sqrt(diff2) / denom;
    if (rel >= result.max_rel_error || result.worst.empty()) {
      result.max_rel_error = std::max(result.max_rel_error, rel);
      result.worst = k < names.size() ? names[k] : std::to_string(k);
    }
  }
  return result;
}

}  // namespace trajdiff::testing
