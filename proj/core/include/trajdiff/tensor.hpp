#pragma once

// Dense float tensors with tape-based reverse-mode differentiation, plus the
// layer primitives the trajectory UNet is built from.
//
// Ops record a backward closure on the thread's active Tape (see TapeScope)
// whenever at least one input requires a gradient. Without an active tape
// every op is a plain forward computation.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace trajdiff {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // empty until a backward pass touches it
  bool requires_grad = false;

  std::vector<float>& grad_buffer();
};
}  // namespace detail

// Shared handle to a float buffer. Copies alias the same storage; use
// clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);

  [[nodiscard]] bool defined() const { return impl_ != nullptr; }
  [[nodiscard]] const Shape& shape() const;
  [[nodiscard]] std::size_t dim(std::size_t axis) const;
  [[nodiscard]] std::size_t rank() const { return shape().size(); }
  [[nodiscard]] std::size_t numel() const;

  [[nodiscard]] std::span<const float> data() const;
  [[nodiscard]] std::span<float> mutable_data();
  [[nodiscard]] float item() const;

  // Empty span when no gradient has been accumulated.
  [[nodiscard]] std::span<const float> grad() const;
  [[nodiscard]] bool has_grad() const;
  void zero_grad();

  [[nodiscard]] bool requires_grad() const;
  void set_requires_grad(bool flag);

  [[nodiscard]] Tensor clone() const;
  [[nodiscard]] Tensor detach() const { return clone(); }

  // Same storage, different shape; numel must match. Not tracked.
  [[nodiscard]] Tensor reshaped(Shape shape) const;

  [[nodiscard]] const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_tensor(Shape shape, bool requires_grad);
};

Tensor make_tensor(Shape shape, bool requires_grad);

// Ordered record of backward closures for one forward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_fn);

  // Seeds d(loss)/d(loss) = 1 and replays the record in reverse. The tape is
  // spent afterwards; calling backward again throws.
  void backward(const Tensor& loss);

  [[nodiscard]] std::size_t size() const { return ops_.size(); }
  [[nodiscard]] bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

// Makes `tape` the active tape of the calling thread for the scope lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Convenience: backward on a tape the caller holds.
inline void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

// ---- primitives ------------------------------------------------------------

// x [B, Cin, L], w [Cout, Cin, K] (K odd), b [Cout] or undefined.
// Stride 1, zero padding K/2, so the output keeps length L.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b);

// x [B, C, L]; statistics per (batch, group) over C/groups channels and L.
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);

Tensor silu(const Tensor& x);

// x [N, in], w [out, in], b [out] or undefined -> [N, out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Softmax over the last axis.
Tensor softmax_lastdim(const Tensor& x);

// x [B, C, L] with L even -> [B, C, L/2].
Tensor maxpool1d_k2(const Tensor& x);

// x [B, C, L] -> [B, C, 2L], each sample repeated.
Tensor upsample_nearest_2x(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);

// Concatenate [B, C1, L] and [B, C2, L] along channels.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Concatenate [N, D1] and [N, D2] along the feature axis.
Tensor concat_features(const Tensor& a, const Tensor& b);

// x [B, C, L] + bias [B, C] broadcast over L.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// x [N, D] with row i multiplied by the constant weights[i].
Tensor scale_rows(const Tensor& x, std::span<const float> weights);

// Batched matmul over the leading axis: a [B, M, K] (or [B, K, M] when
// transpose_a), b [B, K, N] (or [B, N, K] when transpose_b) -> [B, M, N].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

// table [V, D], one row per index -> [N, D].
Tensor embedding(const Tensor& table, std::span<const int> indices);

Tensor sum(const Tensor& x);

// Mean of squared differences over all elements.
Tensor mse(const Tensor& a, const Tensor& b);

// Throws NumericError naming `op` if any element is NaN or infinite.
void check_finite(const Tensor& t, const char* op);

}  // namespace trajdiff
