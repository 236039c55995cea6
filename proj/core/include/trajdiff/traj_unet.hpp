#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "trajdiff/condition.hpp"
#include "trajdiff/rng.hpp"
#include "trajdiff/tensor.hpp"

namespace trajdiff {

struct TrajUNetConfig {
  std::size_t in_channels = 2;  // lng, lat
  std::size_t length = 64;
  std::size_t base_channels = 16;
  std::vector<std::size_t> channel_multipliers{1, 2, 2, 4};
  std::size_t resnet_blocks = 2;
  bool attention = true;
  std::size_t time_embed_dim = 128;
  std::size_t cond_embed_dim = 128;
  std::size_t norm_groups = 8;
  // Bit i enables numeric attribute i in the wide path.
  std::uint32_t numeric_mask = 0xF;
  std::size_t departure_slots = kDepartureSlots;
  std::size_t grid_cells = 256;

  [[nodiscard]] std::size_t levels() const { return channel_multipliers.size(); }
  [[nodiscard]] std::size_t channels_at(std::size_t level) const {
    return base_channels * channel_multipliers.at(level);
  }

  // Throws ArgumentError on inconsistent settings.
  void validate() const;

  static TrajUNetConfig desk();
  static TrajUNetConfig paper();
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Insertion-ordered, uniquely named parameter set.
class ParamStore {
 public:
  Tensor& add(std::string name, Tensor tensor);
  [[nodiscard]] const Tensor& get(std::string_view name) const;
  [[nodiscard]] bool contains(std::string_view name) const;
  [[nodiscard]] const std::vector<NamedTensor>& entries() const { return entries_; }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] std::size_t total_elements() const;
  void zero_grad();

 private:
  std::vector<NamedTensor> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ResnetBlockParams {
  Tensor norm1_gamma, norm1_beta, conv1_w, conv1_b;
  Tensor emb_w, emb_b;  // projects the shared embedding to output channels
  Tensor norm2_gamma, norm2_beta, conv2_w, conv2_b;
  Tensor skip_w, skip_b;  // undefined when input and output channels agree
};

struct AttentionParams {
  Tensor wq, wk, wv;  // [C, C, 1]
};

// sin(t / 10000^(2i/dim)) for i < dim/2, then the matching cosines.
std::vector<float> sinusoidal_time_embedding(double t, std::size_t dim);

// x [B, C, L], emb [B, E] -> [B, C', L].
Tensor resnet_block(const Tensor& x, const Tensor& emb, const ResnetBlockParams& p, std::size_t groups);

// Residual single-head self-attention over the length axis, d = C. When
// `weights` is non-null it receives the [B, L, L] attention matrix.
Tensor self_attention(const Tensor& x, const AttentionParams& p, Tensor* weights = nullptr);

// Resnet block -> residual attention -> Resnet block.
Tensor middle_attention(const Tensor& x, const Tensor& emb, const ResnetBlockParams& first,
                        const AttentionParams& attn, const ResnetBlockParams& second, std::size_t groups);

class TrajUNet final : public NoisePredictor {
 public:
  TrajUNet(TrajUNetConfig config, std::uint64_t seed);

  [[nodiscard]] Tensor predict(const Tensor& x_t, std::span<const int> steps,
                               std::span<const ConditionVector> conds) const override;

  // Sinusoidal embedding followed by the shared FC-SiLU-FC stack: [B, E].
  [[nodiscard]] Tensor time_embedding(std::span<const int> steps) const;

  // Wide (numeric) plus deep (categorical) embedding; zero rows for null
  // conditions: [B, E].
  [[nodiscard]] Tensor condition_embedding(std::span<const ConditionVector> conds) const;

  // Wide path only, before null masking: [B, E].
  [[nodiscard]] Tensor wide_embedding(std::span<const ConditionVector> conds) const;

  // Forward with an explicit condition embedding in place of the W&D output.
  [[nodiscard]] Tensor forward_with_embedding(const Tensor& x_t, std::span<const int> steps,
                                              const Tensor& cond_embedding) const;

  [[nodiscard]] const TrajUNetConfig& config() const { return config_; }
  [[nodiscard]] ParamStore& params() { return params_; }
  [[nodiscard]] const ParamStore& params() const { return params_; }

  // Copies values from `source`; names and shapes must match exactly.
  void load_params(const ParamStore& source);

 private:
  ResnetBlockParams make_block(const std::string& prefix, std::size_t cin, std::size_t cout);
  AttentionParams make_attention(const std::string& prefix, std::size_t channels);
  Tensor& add_param(const std::string& name, Shape shape, float bound);
  Tensor& add_constant(const std::string& name, Shape shape, float value);
  void check_input(const Tensor& x_t, std::size_t steps, std::size_t conds) const;

  TrajUNetConfig config_;
  ParamStore params_;
  RngStream init_rng_;

  Tensor time_fc1_w_, time_fc1_b_, time_fc2_w_, time_fc2_b_;
  Tensor wide_w_, wide_b_;
  Tensor slot_table_, origin_table_, dest_table_;
  Tensor deep_fc1_w_, deep_fc1_b_, deep_fc2_w_, deep_fc2_b_;
  Tensor in_conv_w_, in_conv_b_;
  std::vector<std::vector<ResnetBlockParams>> down_;
  ResnetBlockParams mid_first_, mid_second_;
  AttentionParams mid_attn_;
  std::vector<std::vector<ResnetBlockParams>> up_;
  Tensor out_norm_gamma_, out_norm_beta_, out_conv_w_, out_conv_b_;
};

}  // namespace trajdiff
