#include "trajdiff/traj_unet.hpp"

#include <cmath>

#include "trajdiff/error.hpp"

namespace trajdiff {

void TrajUNetConfig::validate() const {
  if (in_channels == 0 || base_channels == 0 || resnet_blocks == 0) {
    throw ArgumentError("TrajUNetConfig: channel and block counts must be positive");
  }
  if (channel_multipliers.empty()) throw ArgumentError("TrajUNetConfig: need at least one sampling level");
  for (std::size_t m : channel_multipliers) {
    if (m == 0) throw ArgumentError("TrajUNetConfig: zero channel multiplier");
  }
  if (time_embed_dim != cond_embed_dim) {
    throw ArgumentError("TrajUNetConfig: time and condition embeddings are summed and must have equal width");
  }
  if (time_embed_dim == 0 || time_embed_dim % 2 != 0) {
    throw ArgumentError("TrajUNetConfig: time embedding width must be even");
  }
  const std::size_t factor = std::size_t{1} << (levels() - 1);
  if (length == 0 || length % factor != 0) {
    throw ArgumentError("TrajUNetConfig: length " + std::to_string(length) + " not divisible by " +
                        std::to_string(factor) + " for " + std::to_string(levels()) + " levels");
  }
  auto check_groups = [&](std::size_t ch) {
    if (norm_groups == 0 || ch % norm_groups != 0) {
      throw ArgumentError("TrajUNetConfig: " + std::to_string(ch) + " channels not divisible by " +
                          std::to_string(norm_groups) + " norm groups");
    }
  };
  check_groups(base_channels);
  for (std::size_t i = 0; i < levels(); ++i) {
    check_groups(channels_at(i));
    const std::size_t below = i + 1 < levels() ? channels_at(i + 1) : channels_at(i);
    check_groups(below + channels_at(i));
  }
  if (departure_slots == 0 || grid_cells == 0) throw ArgumentError("TrajUNetConfig: empty categorical vocabulary");
}

TrajUNetConfig TrajUNetConfig::desk() { return TrajUNetConfig{}; }

TrajUNetConfig TrajUNetConfig::paper() {
  TrajUNetConfig c;
  c.length = 200;
  c.base_channels = 64;
  // 200 is divisible by 8, so four levels pool cleanly.
  return c;
}

// ---- ParamStore -----------------------------------------------------------------

Tensor& ParamStore::add(std::string name, Tensor tensor) {
  if (index_.contains(name)) throw ArgumentError("duplicate parameter name " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(tensor)});
  return entries_.back().tensor;
}

const Tensor& ParamStore::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ArgumentError("unknown parameter " + std::string(name));
  return entries_[it->second].tensor;
}

bool ParamStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

// ---- building blocks --------------------------------------------------------------

std::vector<float> sinusoidal_time_embedding(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw ArgumentError("time embedding width must be even, got " + std::to_string(dim));
  const std::size_t half = dim / 2;
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    out[i] = static_cast<float>(std::sin(t * freq));
    out[half + i] = static_cast<float>(std::cos(t * freq));
  }
  return out;
}

Tensor resnet_block(const Tensor& x, const Tensor& emb, const ResnetBlockParams& p, std::size_t groups) {
  if (x.rank() != 3) throw ShapeError("resnet_block: x must be [B, C, L], got " + shape_str(x.shape()));
  if (emb.rank() != 2 || emb.dim(0) != x.dim(0)) {
    throw ShapeError("resnet_block: embedding " + shape_str(emb.shape()) + " does not match batch of " +
                     shape_str(x.shape()));
  }
  Tensor h = conv1d(silu(group_norm(x, groups, p.norm1_gamma, p.norm1_beta)), p.conv1_w, p.conv1_b);
  h = add_channel_bias(h, linear(emb, p.emb_w, p.emb_b));
  h = conv1d(silu(group_norm(h, groups, p.norm2_gamma, p.norm2_beta)), p.conv2_w, p.conv2_b);
  const Tensor skip = p.skip_w.defined() ? conv1d(x, p.skip_w, p.skip_b) : x;
  return add(h, skip);
}

Tensor self_attention(const Tensor& x, const AttentionParams& p, Tensor* weights) {
  if (x.rank() != 3) throw ShapeError("self_attention: x must be [B, C, L], got " + shape_str(x.shape()));
  const Tensor none;
  const Tensor q = conv1d(x, p.wq, none);
  const Tensor k = conv1d(x, p.wk, none);
  const Tensor v = conv1d(x, p.wv, none);
  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(x.dim(1)));
  // scores[b, i, j] = <q[:, i], k[:, j]> / sqrt(d)
  const Tensor attn = softmax_lastdim(scale(bmm(q, k, /*transpose_a=*/true, false), inv_sqrt_d));
  if (weights != nullptr) *weights = attn;
  // out[:, i] = sum_j attn[i, j] v[:, j]
  return add(x, bmm(v, attn, false, /*transpose_b=*/true));
}

Tensor middle_attention(const Tensor& x, const Tensor& emb, const ResnetBlockParams& first,
                        const AttentionParams& attn, const ResnetBlockParams& second, std::size_t groups) {
  Tensor h = resnet_block(x, emb, first, groups);
  h = self_attention(h, attn);
  return resnet_block(h, emb, second, groups);
}

// ---- TrajUNet ---------------------------------------------------------------------

Tensor& TrajUNet::add_param(const std::string& name, Shape shape, float bound) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (float& v : t.mutable_data()) v = static_cast<float>(init_rng_.uniform(-bound, bound));
  return params_.add(name, std::move(t));
}

Tensor& TrajUNet::add_constant(const std::string& name, Shape shape, float value) {
  return params_.add(name, Tensor::full(std::move(shape), value, true));
}

ResnetBlockParams TrajUNet::make_block(const std::string& prefix, std::size_t cin, std::size_t cout) {
  ResnetBlockParams p;
  const std::size_t E = config_.time_embed_dim;
  const float b1 = 1.0f / std::sqrt(static_cast<float>(cin * 3));
  const float b2 = 1.0f / std::sqrt(static_cast<float>(cout * 3));
  const float be = 1.0f / std::sqrt(static_cast<float>(E));
  p.norm1_gamma = add_constant(prefix + ".norm1.gamma", {cin}, 1.0f);
  p.norm1_beta = add_constant(prefix + ".norm1.beta", {cin}, 0.0f);
  p.conv1_w = add_param(prefix + ".conv1.weight", {cout, cin, 3}, b1);
  p.conv1_b = add_param(prefix + ".conv1.bias", {cout}, b1);
  p.emb_w = add_param(prefix + ".emb_proj.weight", {cout, E}, be);
  p.emb_b = add_param(prefix + ".emb_proj.bias", {cout}, be);
  p.norm2_gamma = add_constant(prefix + ".norm2.gamma", {cout}, 1.0f);
  p.norm2_beta = add_constant(prefix + ".norm2.beta", {cout}, 0.0f);
  p.conv2_w = add_param(prefix + ".conv2.weight", {cout, cout, 3}, b2);
  p.conv2_b = add_param(prefix + ".conv2.bias", {cout}, b2);
  if (cin != cout) {
    const float bs = 1.0f / std::sqrt(static_cast<float>(cin));
    p.skip_w = add_param(prefix + ".skip.weight", {cout, cin, 1}, bs);
    p.skip_b = add_param(prefix + ".skip.bias", {cout}, bs);
  }
  return p;
}

AttentionParams TrajUNet::make_attention(const std::string& prefix, std::size_t channels) {
  const float b = 1.0f / std::sqrt(static_cast<float>(channels));
  AttentionParams a;
  a.wq = add_param(prefix + ".wq", {channels, channels, 1}, b);
  a.wk = add_param(prefix + ".wk", {channels, channels, 1}, b);
  a.wv = add_param(prefix + ".wv", {channels, channels, 1}, b);
  return a;
}

TrajUNet::TrajUNet(TrajUNetConfig config, std::uint64_t seed) : config_(std::move(config)), init_rng_(seed, 0x5eed) {
  config_.validate();
  const std::size_t E = config_.time_embed_dim;
  const float bE = 1.0f / std::sqrt(static_cast<float>(E));

  time_fc1_w_ = add_param("time_mlp.fc1.weight", {E, E}, bE);
  time_fc1_b_ = add_param("time_mlp.fc1.bias", {E}, bE);
  time_fc2_w_ = add_param("time_mlp.fc2.weight", {E, E}, bE);
  time_fc2_b_ = add_param("time_mlp.fc2.bias", {E}, bE);

  const float bw = 1.0f / std::sqrt(static_cast<float>(kNumericAttributes));
  wide_w_ = add_param("cond.wide.weight", {E, kNumericAttributes}, bw);
  wide_b_ = add_param("cond.wide.bias", {E}, bw);
  slot_table_ = add_param("cond.deep.departure_slot", {config_.departure_slots, E}, 1.0f);
  origin_table_ = add_param("cond.deep.origin_cell", {config_.grid_cells, E}, 1.0f);
  dest_table_ = add_param("cond.deep.destination_cell", {config_.grid_cells, E}, 1.0f);
  const float bd = 1.0f / std::sqrt(static_cast<float>(3 * E));
  deep_fc1_w_ = add_param("cond.deep.fc1.weight", {E, 3 * E}, bd);
  deep_fc1_b_ = add_param("cond.deep.fc1.bias", {E}, bd);
  deep_fc2_w_ = add_param("cond.deep.fc2.weight", {E, E}, bE);
  deep_fc2_b_ = add_param("cond.deep.fc2.bias", {E}, bE);

  const std::size_t base = config_.base_channels;
  const float bi = 1.0f / std::sqrt(static_cast<float>(config_.in_channels * 3));
  in_conv_w_ = add_param("in_conv.weight", {base, config_.in_channels, 3}, bi);
  in_conv_b_ = add_param("in_conv.bias", {base}, bi);

  const std::size_t levels = config_.levels();
  down_.resize(levels);
  std::size_t ch = base;
  for (std::size_t i = 0; i < levels; ++i) {
    const std::size_t out = config_.channels_at(i);
    for (std::size_t r = 0; r < config_.resnet_blocks; ++r) {
      down_[i].push_back(make_block("down." + std::to_string(i) + ".block." + std::to_string(r), ch, out));
      ch = out;
    }
  }

  mid_first_ = make_block("mid.block.0", ch, ch);
  if (config_.attention) mid_attn_ = make_attention("mid.attn", ch);
  mid_second_ = make_block("mid.block.1", ch, ch);

  up_.resize(levels);
  for (std::size_t ii = levels; ii-- > 0;) {
    const std::size_t out = config_.channels_at(ii);
    std::size_t cin = ch + out;  // upsampled features concatenated with the level's skip
    for (std::size_t r = 0; r < config_.resnet_blocks; ++r) {
      up_[ii].push_back(make_block("up." + std::to_string(ii) + ".block." + std::to_string(r), cin, out));
      cin = out;
    }
    ch = out;
  }

  out_norm_gamma_ = add_constant("out.norm.gamma", {ch}, 1.0f);
  out_norm_beta_ = add_constant("out.norm.beta", {ch}, 0.0f);
  const float bo = 1.0f / std::sqrt(static_cast<float>(ch * 3));
  out_conv_w_ = add_param("out.conv.weight", {config_.in_channels, ch, 3}, bo);
  out_conv_b_ = add_param("out.conv.bias", {config_.in_channels}, bo);
}

void TrajUNet::load_params(const ParamStore& source) {
  if (source.size() != params_.size()) {
    throw DataError("parameter count mismatch: expected " + std::to_string(params_.size()) + ", got " +
                    std::to_string(source.size()));
  }
  for (auto& entry : params_.entries()) {
    if (!source.contains(entry.name)) throw DataError("missing parameter " + entry.name);
    const Tensor& src = source.get(entry.name);
    if (src.shape() != entry.tensor.shape()) {
      throw DataError("parameter " + entry.name + " has shape " + shape_str(src.shape()) + ", expected " +
                      shape_str(entry.tensor.shape()));
    }
    Tensor dst = entry.tensor;
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
  }
}

Tensor TrajUNet::time_embedding(std::span<const int> steps) const {
  const std::size_t E = config_.time_embed_dim;
  Tensor sin_emb = Tensor::zeros({steps.size(), E});
  for (std::size_t n = 0; n < steps.size(); ++n) {
    const auto row = sinusoidal_time_embedding(static_cast<double>(steps[n]), E);
    std::copy(row.begin(), row.end(), sin_emb.mutable_data().begin() + static_cast<std::ptrdiff_t>(n * E));
  }
  return linear(silu(linear(sin_emb, time_fc1_w_, time_fc1_b_)), time_fc2_w_, time_fc2_b_);
}

Tensor TrajUNet::wide_embedding(std::span<const ConditionVector> conds) const {
  Tensor numeric = Tensor::zeros({conds.size(), kNumericAttributes});
  for (std::size_t n = 0; n < conds.size(); ++n) {
    for (std::size_t a = 0; a < kNumericAttributes; ++a) {
      const bool on = (config_.numeric_mask >> a) & 1U;
      numeric.mutable_data()[n * kNumericAttributes + a] = on ? conds[n].numeric[a] : 0.0f;
    }
  }
  return linear(numeric, wide_w_, wide_b_);
}

Tensor TrajUNet::condition_embedding(std::span<const ConditionVector> conds) const {
  std::vector<int> slot(conds.size()), origin(conds.size()), dest(conds.size());
  std::vector<float> keep(conds.size());
  for (std::size_t n = 0; n < conds.size(); ++n) {
    const ConditionVector& c = conds[n];
    keep[n] = c.is_null ? 0.0f : 1.0f;
    if (c.is_null) continue;  // indices stay 0; the row is zeroed below
    if (c.departure_slot < 0 || static_cast<std::size_t>(c.departure_slot) >= config_.departure_slots) {
      throw ShapeError("departure slot " + std::to_string(c.departure_slot) + " outside [0, " +
                       std::to_string(config_.departure_slots) + ")");
    }
    auto check_cell = [&](int cell, const char* what) {
      if (cell < 0 || static_cast<std::size_t>(cell) >= config_.grid_cells) {
        throw ShapeError(std::string(what) + " cell " + std::to_string(cell) + " outside [0, " +
                         std::to_string(config_.grid_cells) + ")");
      }
    };
    check_cell(c.origin_cell, "origin");
    check_cell(c.destination_cell, "destination");
    slot[n] = c.departure_slot;
    origin[n] = c.origin_cell;
    dest[n] = c.destination_cell;
  }
  const Tensor wide = wide_embedding(conds);
  const Tensor cat = concat_features(concat_features(embedding(slot_table_, slot), embedding(origin_table_, origin)),
                                     embedding(dest_table_, dest));
  const Tensor deep = linear(silu(linear(cat, deep_fc1_w_, deep_fc1_b_)), deep_fc2_w_, deep_fc2_b_);
  return scale_rows(add(wide, deep), keep);
}

void TrajUNet::check_input(const Tensor& x_t, std::size_t steps, std::size_t conds) const {
  if (x_t.rank() != 3 || x_t.dim(1) != config_.in_channels || x_t.dim(2) != config_.length) {
    throw ShapeError("TrajUNet: expected input [B, " + std::to_string(config_.in_channels) + ", " +
                     std::to_string(config_.length) + "], got " + shape_str(x_t.shape()));
  }
  if (steps != x_t.dim(0) || conds != x_t.dim(0)) {
    throw ShapeError("TrajUNet: batch of " + std::to_string(x_t.dim(0)) + " with " + std::to_string(steps) +
                     " steps and " + std::to_string(conds) + " conditions");
  }
}

Tensor TrajUNet::predict(const Tensor& x_t, std::span<const int> steps, std::span<const ConditionVector> conds) const {
  check_input(x_t, steps.size(), conds.size());
  return forward_with_embedding(x_t, steps, condition_embedding(conds));
}

Tensor TrajUNet::forward_with_embedding(const Tensor& x_t, std::span<const int> steps,
                                        const Tensor& cond_embedding) const {
  check_input(x_t, steps.size(), x_t.dim(0));
  if (cond_embedding.rank() != 2 || cond_embedding.dim(0) != x_t.dim(0) ||
      cond_embedding.dim(1) != config_.cond_embed_dim) {
    throw ShapeError("TrajUNet: condition embedding shape " + shape_str(cond_embedding.shape()));
  }
  const std::size_t groups = config_.norm_groups;
  const Tensor emb = add(time_embedding(steps), cond_embedding);

  Tensor h = conv1d(x_t, in_conv_w_, in_conv_b_);
  std::vector<Tensor> skips;
  const std::size_t levels = config_.levels();
  for (std::size_t i = 0; i < levels; ++i) {
    for (const auto& block : down_[i]) h = resnet_block(h, emb, block, groups);
    skips.push_back(h);
    if (i + 1 < levels) h = maxpool1d_k2(h);
  }

  if (config_.attention) {
    h = middle_attention(h, emb, mid_first_, mid_attn_, mid_second_, groups);
  } else {
    h = resnet_block(resnet_block(h, emb, mid_first_, groups), emb, mid_second_, groups);
  }

  for (std::size_t ii = levels; ii-- > 0;) {
    if (ii + 1 < levels) h = upsample_nearest_2x(h);
    h = concat_channels(h, skips[ii]);
    for (const auto& block : up_[ii]) h = resnet_block(h, emb, block, groups);
  }

  h = silu(group_norm(h, groups, out_norm_gamma_, out_norm_beta_));
  return conv1d(h, out_conv_w_, out_conv_b_);
}

}  // namespace trajdiff
