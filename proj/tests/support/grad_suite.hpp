#pragma once

// The gradient suite: finite-difference checks of every tensor primitive and
// of a tiny Traj-UNet. Shared by the unit tests and the acceptance binary.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "trajdiff/traj_unet.hpp"

namespace trajdiff::testing {

using GradFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCase {
  std::string name;
  GradFn f;
  std::vector<Tensor> inputs;
  std::vector<std::string> names;
};

inline std::vector<GradCase> primitive_grad_cases(std::uint64_t seed = 5) {
  RngStream rng(seed, 0);
  std::vector<GradCase> cases;
  auto add_case = [&](std::string name, GradFn f, std::vector<Tensor> inputs, std::vector<std::string> names) {
    cases.push_back({std::move(name), std::move(f), std::move(inputs), std::move(names)});
  };

  add_case("conv1d", [](const auto& in) { return conv1d(in[0], in[1], in[2]); },
           {random_tensor({2, 3, 8}, rng), random_tensor({4, 3, 3}, rng, 0.5), random_tensor({4}, rng)},
           {"x", "w", "b"});
  add_case("group_norm", [](const auto& in) { return group_norm(in[0], 2, in[1], in[2]); },
           {random_tensor({2, 4, 6}, rng), random_tensor({4}, rng), random_tensor({4}, rng)}, {"x", "gamma", "beta"});
  add_case("silu", [](const auto& in) { return silu(in[0]); }, {random_tensor({3, 7}, rng, 2.0)}, {"x"});
  add_case("linear", [](const auto& in) { return linear(in[0], in[1], in[2]); },
           {random_tensor({3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)}, {"x", "w", "b"});
  add_case("softmax", [](const auto& in) { return softmax_lastdim(in[0]); }, {random_tensor({3, 6}, rng)}, {"x"});
  {
    // Well separated values keep the max-pool winner fixed under +-h.
    std::vector<float> v(2 * 3 * 8);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>((i * 37 % 48) * 0.05);
    add_case("maxpool", [](const auto& in) { return maxpool1d_k2(in[0]); }, {Tensor::from({2, 3, 8}, v, true)},
             {"x"});
  }
  add_case("upsample", [](const auto& in) { return upsample_nearest_2x(in[0]); }, {random_tensor({2, 3, 4}, rng)},
           {"x"});
  add_case("add", [](const auto& in) { return add(in[0], in[1]); },
           {random_tensor({2, 5}, rng), random_tensor({2, 5}, rng)}, {"a", "b"});
  add_case("sub", [](const auto& in) { return sub(in[0], in[1]); },
           {random_tensor({2, 5}, rng), random_tensor({2, 5}, rng)}, {"a", "b"});
  add_case("mul", [](const auto& in) { return mul(in[0], in[1]); },
           {random_tensor({2, 5}, rng), random_tensor({2, 5}, rng)}, {"a", "b"});
  add_case("scale", [](const auto& in) { return scale(in[0], -1.5f); }, {random_tensor({4}, rng)}, {"x"});
  add_case("concat_channels", [](const auto& in) { return concat_channels(in[0], in[1]); },
           {random_tensor({2, 2, 5}, rng), random_tensor({2, 3, 5}, rng)}, {"a", "b"});
  add_case("concat_features", [](const auto& in) { return concat_features(in[0], in[1]); },
           {random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)}, {"a", "b"});
  add_case("add_channel_bias", [](const auto& in) { return add_channel_bias(in[0], in[1]); },
           {random_tensor({2, 3, 5}, rng), random_tensor({2, 3}, rng)}, {"x", "bias"});
  const std::vector<float> rows{1.0f, 0.0f, -2.0f};
  add_case("scale_rows", [rows](const auto& in) { return scale_rows(in[0], rows); }, {random_tensor({3, 4}, rng)},
           {"x"});
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      const Shape sa = ta ? Shape{2, 4, 3} : Shape{2, 3, 4};
      const Shape sb = tb ? Shape{2, 5, 4} : Shape{2, 4, 5};
      add_case("bmm" + std::to_string(ta) + std::to_string(tb),
               [ta, tb](const auto& in) { return bmm(in[0], in[1], ta != 0, tb != 0); },
               {random_tensor(sa, rng), random_tensor(sb, rng)}, {"a", "b"});
    }
  const std::vector<int> ids{2, 0, 2, 3};
  add_case("embedding", [ids](const auto& in) { return embedding(in[0], ids); }, {random_tensor({5, 3}, rng)},
           {"table"});
  add_case("sum", [](const auto& in) { return sum(in[0]); }, {random_tensor({3, 3}, rng)}, {"x"});
  add_case("mse", [](const auto& in) { return mse(in[0], in[1]); },
           {random_tensor({2, 6}, rng), random_tensor({2, 6}, rng)}, {"a", "b"});
  return cases;
}

inline TrajUNetConfig tiny_unet_config() {
  TrajUNetConfig c;
  c.length = 16;
  c.base_channels = 4;
  c.channel_multipliers = {1, 2};
  c.resnet_blocks = 1;
  c.time_embed_dim = 8;
  c.cond_embed_dim = 8;
  c.norm_groups = 2;
  c.grid_cells = 16;
  return c;
}

struct NamedError {
  std::string name;
  double error = 0.0;
};

// Checks x_t together with a representative parameter of every layer kind.
// Parameters feeding the first max-pool are differenced with a small step so
// probes rarely cross a pooling switch. Downstream, the gradients are small
// enough (attention queries especially) that float32 rounding needs a larger
// step to stay under the tolerance.
inline std::vector<NamedError> tiny_unet_grad_errors() {
  TrajUNet model(tiny_unet_config(), 10);
  RngStream rng(10, 0);
  const Tensor x = random_tensor({2, 2, 16}, rng, 1.0, true);
  const std::vector<int> steps{4, 77};
  ConditionVector cond;
  cond.numeric = {0.5f, -1.0f, 0.25f, 2.0f};
  cond.departure_slot = 5;
  cond.origin_cell = 1;
  cond.destination_cell = 2;
  const std::vector<ConditionVector> conds{cond, ConditionVector::null()};
  const std::vector<std::string> names{"in_conv.weight",     "down.0.block.0.conv1.weight", "mid.attn.wq",
                                       "mid.attn.wv",        "up.0.block.0.skip.weight",    "out.conv.weight",
                                       "time_mlp.fc1.weight", "cond.wide.weight",           "cond.deep.origin_cell",
                                       "cond.deep.fc1.weight", "down.1.block.0.norm1.gamma"};
  auto f = [&](const std::vector<Tensor>& in) { return model.predict(in[0], steps, conds); };
  std::vector<NamedError> out;
  for (const auto& n : names) {
    const bool before_pool = n.rfind("in_conv.", 0) == 0 || n.rfind("down.0.", 0) == 0;
    const double h = before_pool ? 1e-3 : 1e-2;
    const auto result = grad_check(f, {x, model.params().get(n)}, {"x_t", n}, h, 24);
    out.push_back({n + " (worst: " + result.worst + ")", result.max_rel_error});
  }
  return out;
}

}  // namespace trajdiff::testing
