#include "trajdiff/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "trajdiff/error.hpp"

namespace trajdiff {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXf>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXf>;

thread_local Tape* g_active_tape = nullptr;

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

// Returns the active tape when any of the inputs needs a gradient.
template <typename... Ts>
Tape* tracking_tape(const Ts&... inputs) {
  if (g_active_tape == nullptr) return nullptr;
  const bool any = ((inputs.defined() && inputs.requires_grad()) || ...);
  return any ? g_active_tape : nullptr;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

bool wants_grad(const ImplPtr& p) { return p && p->requires_grad; }

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<float>& detail::TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0f);
  return grad;
}

Tensor make_tensor(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->value.assign(shape_numel(shape), 0.0f);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return make_tensor(std::move(shape), requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t = make_tensor(std::move(shape), requires_grad);
  std::fill(t.impl_->value.begin(), t.impl_->value.end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " + std::to_string(values.size()));
  }
  Tensor t = make_tensor(std::move(shape), requires_grad);
  t.impl_->value = std::move(values);
  return t;
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ShapeError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const float> Tensor::data() const {
  if (!impl_) throw ShapeError("use of undefined tensor");
  return impl_->value;
}

std::span<float> Tensor::mutable_data() {
  if (!impl_) throw ShapeError("use of undefined tensor");
  return impl_->value;
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->value[0];
}

std::span<const float> Tensor::grad() const {
  if (!impl_) throw ShapeError("use of undefined tensor");
  return impl_->grad;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!impl_) throw ShapeError("use of undefined tensor");
  impl_->requires_grad = flag;
}

Tensor Tensor::clone() const {
  Tensor t = make_tensor(shape(), false);
  t.impl_->value = impl_->value;
  return t;
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw ShapeError("reshape " + shape_str(shape()) + " -> " + shape_str(new_shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(new_shape);
  impl->value = impl_->value;
  return Tensor(std::move(impl));
}

// ---- tape -------------------------------------------------------------------

void Tape::record(std::function<void()> backward_fn) {
  if (consumed_) throw ArgumentError("record on a tape whose backward pass already ran");
  ops_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ArgumentError("backward called twice on the same tape");
  if (ops_.empty()) throw ArgumentError("backward on an empty tape");
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) throw ArgumentError("loss was not produced by a tracked forward pass");
  consumed_ = true;
  loss.impl()->grad_buffer()[0] = 1.0f;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  ops_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void check_finite(const Tensor& t, const char* op) {
  if (!ConstMapVec(t.data().data(), static_cast<Eigen::Index>(t.numel())).allFinite())
    throw NumericError(std::string(op) + ": produced a non-finite value");
}

// ---- conv1d -----------------------------------------------------------------

namespace {

// col[(i*K + k), l] = x[i, l + k - pad], zero outside [0, L). Rows of col are
// ld floats apart so a whole batch can sit side by side.
void im2col(const float* x, std::size_t cin, std::size_t len, std::size_t k, float* col, std::size_t ld) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto L = static_cast<std::ptrdiff_t>(len);
  for (std::size_t i = 0; i < cin; ++i) {
    const float* xr = x + i * len;
    for (std::size_t kk = 0; kk < k; ++kk) {
      float* row = col + (i * k + kk) * ld;
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kk) - pad;
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(L, L - shift);
      for (std::ptrdiff_t l = 0; l < lo; ++l) row[l] = 0.0f;
      for (std::ptrdiff_t l = lo; l < hi; ++l) row[l] = xr[l + shift];
      for (std::ptrdiff_t l = std::max(hi, lo); l < L; ++l) row[l] = 0.0f;
    }
  }
}

void col2im_add(const float* col, std::size_t cin, std::size_t len, std::size_t k, float* gx, std::size_t ld) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto L = static_cast<std::ptrdiff_t>(len);
  for (std::size_t i = 0; i < cin; ++i) {
    float* gr = gx + i * len;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const float* row = col + (i * k + kk) * ld;
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kk) - pad;
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(L, L - shift);
      for (std::ptrdiff_t l = lo; l < hi; ++l) gr[l + shift] += row[l];
    }
  }
}

// Lays out the batch as one [Cin*K, B*L] matrix, sample n in columns [n*L, (n+1)*L).
void batch_im2col(const float* x, std::size_t B, std::size_t cin, std::size_t len, std::size_t k,
                  std::vector<float>& col) {
  const std::size_t ld = B * len;
  col.resize(cin * k * ld);
  for (std::size_t n = 0; n < B; ++n) im2col(x + n * cin * len, cin, len, k, col.data() + n * len, ld);
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 3, "conv1d: x must be [B, Cin, L], got " + shape_str(x.shape()));
  require(w.rank() == 3, "conv1d: w must be [Cout, Cin, K], got " + shape_str(w.shape()));
  const std::size_t B = x.dim(0), cin = x.dim(1), len = x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  require(w.dim(1) == cin, "conv1d: channel mismatch, x has " + std::to_string(cin) + " channels, w expects " +
                               std::to_string(w.dim(1)));
  require(len > 0, "conv1d: empty sequence");
  require(k % 2 == 1, "conv1d: kernel size must be odd");
  if (b.defined()) require(b.rank() == 1 && b.dim(0) == cout, "conv1d: bias must be [Cout]");

  Tensor out = make_tensor({B, cout, len}, false);
  const std::size_t rows = cin * k;
  const auto BL = static_cast<Eigen::Index>(B * len);
  ConstMapMat W(w.data().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(rows));
  // One product per sample keeps each output independent of the batch around it.
  std::vector<float> col(k == 1 ? 0 : rows * len);
  for (std::size_t n = 0; n < B; ++n) {
    const float* xb = x.data().data() + n * cin * len;
    const float* colp = xb;
    if (k != 1) {
      im2col(xb, cin, len, k, col.data(), len);
      colp = col.data();
    }
    MapMat Y(out.mutable_data().data() + n * cout * len, static_cast<Eigen::Index>(cout),
             static_cast<Eigen::Index>(len));
    Y.noalias() = W * ConstMapMat(colp, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(len));
    if (b.defined()) {
      for (std::size_t o = 0; o < cout; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += b.data()[o];
    }
  }
  check_finite(out, "conv1d");

  if (Tape* tape = tracking_tape(x, w, b)) {
    out.set_requires_grad(true);
    tape->record([xi = x.impl(), wi = w.impl(), bi = b.impl(), oi = out.impl(), B, cin, cout, len, k, rows, BL]() {
      if (oi->grad.empty()) return;
      // The backward products run over the whole batch at once, with the output
      // gradient laid out as [Cout, B*L] to match the columns.
      RowMat G(static_cast<Eigen::Index>(cout), BL);
      for (std::size_t n = 0; n < B; ++n)
        for (std::size_t o = 0; o < cout; ++o)
          std::copy_n(oi->grad.data() + (n * cout + o) * len, len, G.data() + o * B * len + n * len);
      if (wants_grad(wi)) {
        std::vector<float> col;
        batch_im2col(xi->value.data(), B, cin, len, k, col);
        MapMat GW(wi->grad_buffer().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(rows));
        GW.noalias() += G * ConstMapMat(col.data(), static_cast<Eigen::Index>(rows), BL).transpose();
      }
      if (wants_grad(bi)) {
        auto& gb = bi->grad_buffer();
        for (std::size_t o = 0; o < cout; ++o) {
          double acc = 0.0;
          for (Eigen::Index l = 0; l < BL; ++l) acc += G(static_cast<Eigen::Index>(o), l);
          gb[o] += static_cast<float>(acc);
        }
      }
      if (wants_grad(xi)) {
        ConstMapMat W(wi->value.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(rows));
        RowMat GC(static_cast<Eigen::Index>(rows), BL);
        GC.noalias() = W.transpose() * G;
        float* gx = xi->grad_buffer().data();
        for (std::size_t n = 0; n < B; ++n)
          col2im_add(GC.data() + n * len, cin, len, k, gx + n * cin * len, B * len);
      }
    });
  }
  return out;
}

// ---- group_norm ---------------------------------------------------------------

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta, float eps) {
  require(x.rank() == 3, "group_norm: x must be [B, C, L], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), len = x.dim(2);
  require(groups > 0 && C % groups == 0,
          "group_norm: " + std::to_string(C) + " channels not divisible into " + std::to_string(groups) + " groups");
  require(gamma.numel() == C && beta.numel() == C, "group_norm: gamma/beta must have C elements");
  if (!(eps > 0.0f)) throw ArgumentError("group_norm: eps must be positive");

  const std::size_t cpg = C / groups;
  const std::size_t count = cpg * len;
  std::vector<double> mean(B * groups), inv_std(B * groups);
  Tensor out = make_tensor({B, C, len}, false);
  const float* xv = x.data().data();
  float* yv = out.mutable_data().data();
  const float* gv = gamma.data().data();
  const float* bv = beta.data().data();

  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t g = 0; g < groups; ++g) {
      const float* base = xv + (n * C + g * cpg) * len;
      double s = 0.0;
      for (std::size_t i = 0; i < count; ++i) s += base[i];
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        const double d = base[i] - mu;
        ss += d * d;
      }
      const double var = ss / static_cast<double>(count);
      const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
      mean[n * groups + g] = mu;
      inv_std[n * groups + g] = is;
      for (std::size_t c = 0; c < cpg; ++c) {
        const std::size_t ch = g * cpg + c;
        const float* xr = base + c * len;
        float* yr = yv + (n * C + ch) * len;
        const auto a = static_cast<float>(is * gv[ch]);
        const auto fmu = static_cast<float>(mu);
        for (std::size_t l = 0; l < len; ++l) yr[l] = (xr[l] - fmu) * a + bv[ch];
      }
    }
  }
  check_finite(out, "group_norm");

  if (Tape* tape = tracking_tape(x, gamma, beta)) {
    out.set_requires_grad(true);
    tape->record([xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(), mean = std::move(mean),
                  inv_std = std::move(inv_std), B, C, len, groups, cpg, count]() {
      if (oi->grad.empty()) return;
      const float* xv = xi->value.data();
      const float* dy = oi->grad.data();
      const float* gv = gi->value.data();
      float* gx = wants_grad(xi) ? xi->grad_buffer().data() : nullptr;
      float* ggamma = wants_grad(gi) ? gi->grad_buffer().data() : nullptr;
      float* gbeta = wants_grad(bi) ? bi->grad_buffer().data() : nullptr;
      std::vector<double> dgamma(C, 0.0), dbeta(C, 0.0);
      std::vector<float> xhat(cpg * len);
      for (std::size_t n = 0; n < B; ++n) {
        for (std::size_t g = 0; g < groups; ++g) {
          const double mu = mean[n * groups + g];
          const double is = inv_std[n * groups + g];
          const auto fmu = static_cast<float>(mu);
          const auto fis = static_cast<float>(is);
          // Per channel sums of dy and dy*xhat; the group sums follow from them.
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t c = 0; c < cpg; ++c) {
            const std::size_t ch = g * cpg + c;
            const std::size_t off = (n * C + ch) * len;
            float* xh = xhat.data() + c * len;
            float s_d = 0.0f, s_dx = 0.0f;
            for (std::size_t l = 0; l < len; ++l) {
              xh[l] = (xv[off + l] - fmu) * fis;
              s_d += dy[off + l];
              s_dx += dy[off + l] * xh[l];
            }
            dgamma[ch] += s_dx;
            dbeta[ch] += s_d;
            sum_dxhat += static_cast<double>(s_d) * gv[ch];
            sum_dxhat_xhat += static_cast<double>(s_dx) * gv[ch];
          }
          if (gx == nullptr) continue;
          const double inv_n = 1.0 / static_cast<double>(count);
          const auto c1 = static_cast<float>(is * inv_n * sum_dxhat);
          const auto c2 = static_cast<float>(is * inv_n * sum_dxhat_xhat);
          for (std::size_t c = 0; c < cpg; ++c) {
            const std::size_t ch = g * cpg + c;
            const std::size_t off = (n * C + ch) * len;
            const float* xh = xhat.data() + c * len;
            const auto a = static_cast<float>(is * gv[ch]);
            for (std::size_t l = 0; l < len; ++l) gx[off + l] += a * dy[off + l] - c1 - xh[l] * c2;
          }
        }
      }
      for (std::size_t c = 0; c < C; ++c) {
        if (ggamma) ggamma[c] += static_cast<float>(dgamma[c]);
        if (gbeta) gbeta[c] += static_cast<float>(dbeta[c]);
      }
    });
  }
  return out;
}

// ---- elementwise --------------------------------------------------------------

namespace {

// Vectorized logistic function. Every element, the tail included, goes through
// the same fixed-size packet code, so results do not depend on buffer
// alignment or on an element's position.
void sigmoid(const float* x, std::size_t n, float* y) {
  using Block = Eigen::Array<float, 16, 1>;
  Block in, out;
  for (std::size_t i = 0; i < n; i += 16) {
    const std::size_t m = std::min<std::size_t>(16, n - i);
    in.setZero();
    std::copy_n(x + i, m, in.data());
    out = 1.0f / (1.0f + (-in).exp());
    std::copy_n(out.data(), m, y + i);
  }
}

}  // namespace

Tensor silu(const Tensor& x) {
  Tensor out = make_tensor(x.shape(), false);
  const std::size_t n = x.numel();
  const float* xv = x.data().data();
  float* yv = out.mutable_data().data();
  sigmoid(xv, n, yv);
  for (std::size_t i = 0; i < n; ++i) yv[i] *= xv[i];
  check_finite(out, "silu");
  if (Tape* tape = tracking_tape(x)) {
    out.set_requires_grad(true);
    tape->record([xi = x.impl(), oi = out.impl(), n]() {
      if (oi->grad.empty()) return;
      std::vector<float> sig(n);
      sigmoid(xi->value.data(), n, sig.data());
      auto& gx = xi->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const float v = xi->value[i], s = sig[i];
        gx[i] += oi->grad[i] * (s + v * s * (1.0f - s));
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = make_tensor(a.shape(), false);
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] + b.data()[i];
  check_finite(out, "add");
  if (Tape* tape = tracking_tape(a, b)) {
    out.set_requires_grad(true);
    tape->record([ai = a.impl(), bi = b.impl(), oi = out.impl(), n]() {
      if (oi->grad.empty()) return;
      if (wants_grad(ai)) {
        auto& g = ai->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += oi->grad[i];
      }
      if (wants_grad(bi)) {
        auto& g = bi->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += oi->grad[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = make_tensor(a.shape(), false);
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] - b.data()[i];
  check_finite(out, "sub");
  if (Tape* tape = tracking_tape(a, b)) {
    out.set_requires_grad(true);
    tape->record([ai = a.impl(), bi = b.impl(), oi = out.impl(), n]() {
      if (oi->grad.empty()) return;
      if (wants_grad(ai)) {
        auto& g = ai->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += oi->grad[i];
      }
      if (wants_grad(bi)) {
        auto& g = bi->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] -= oi->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = make_tensor(a.shape(), false);
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] * b.data()[i];
  check_finite(out, "mul");
  if (Tape* tape = tracking_tape(a, b)) {
    out.set_requires_grad(true);
    tape->record([ai = a.impl(), bi = b.impl(), oi = out.impl(), n]() {
      if (oi->grad.empty()) return;
      if (wants_grad(ai)) {
        auto& g = ai->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += oi->grad[i] * bi->value[i];
      }
      if (wants_grad(bi)) {
        auto& g = bi->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += oi->grad[i] * ai->value[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, float factor) {
  Tensor out = make_tensor(x.shape(), false);
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = x.data()[i] * factor;
  check_finite(out, "scale");
  if (Tape* tape = tracking_tape(x)) {
    out.set_requires_grad(true);
    tape->record([xi = x.impl(), oi = out.impl(), n, factor]() {
      if (oi->grad.empty()) return;
      auto& g = xi->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] += oi->grad[i] * factor;
    });
  }
  return out;
}

// ---- linear -------------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 2, "linear: x must be [N, in], got " + shape_str(x.shape()));
  require(w.rank() == 2, "linear: w must be [out, in], got " + shape_str(w.shape()));
  const std::size_t N = x.dim(0), in = x.dim(1), outd = w.dim(0);
  require(w.dim(1) == in, "linear: input width " + std::to_string(in) + " vs weight " + shape_str(w.shape()));
  if (b.defined()) require(b.numel() == outd, "linear: bias must have " + std::to_string(outd) + " elements");

  Tensor out = make_tensor({N, outd}, false);
  ConstMapMat W(w.data().data(), static_cast<Eigen::Index>(outd), static_cast<Eigen::Index>(in));
  // Row-at-a-time so a row's result never depends on the batch it rides in.
  for (std::size_t r = 0; r < N; ++r) {
    ConstMapVec xr(x.data().data() + r * in, static_cast<Eigen::Index>(in));
    MapVec yr(out.mutable_data().data() + r * outd, static_cast<Eigen::Index>(outd));
    yr.noalias() = W * xr;
    if (b.defined()) yr += ConstMapVec(b.data().data(), static_cast<Eigen::Index>(outd));
  }
  check_finite(out, "linear");

  if (Tape* tape = tracking_tape(x, w, b)) {
    out.set_requires_grad(true);
    tape->record([xi = x.impl(), wi = w.impl(), bi = b.impl(), oi = out.impl(), N, in, outd]() {
      if (oi->grad.empty()) return;
      ConstMapMat G(oi->grad.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(outd));
      ConstMapMat X(xi->value.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(in));
      ConstMapMat W(wi->value.data(), static_cast<Eigen::Index>(outd), static_cast<Eigen::Index>(in));
      if (wants_grad(wi)) {
        MapMat GW(wi->grad_buffer().data(), static_cast<Eigen::Index>(outd), static_cast<Eigen::Index>(in));
        GW.noalias() += G.transpose() * X;
      }
      if (wants_grad(bi)) {
        auto& gb = bi->grad_buffer();
        for (std::size_t o = 0; o < outd; ++o) {
          double acc = 0.0;
          for (std::size_t r = 0; r < N; ++r) acc += oi->grad[r * outd + o];
          gb[o] += static_cast<float>(acc);
        }
      }
      if (wants_grad(xi)) {
        MapMat GX(xi->grad_buffer().data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(in));
        GX.noalias() += G * W;
      }
    });
  }
  return out;
}

// ---- softmax ------------------------------------------------------------------

Tensor softmax_lastdim(const Tensor& x) {
  require(x.rank() >= 1, "softmax_lastdim: scalar input");
  const std::size_t width = x.shape().back();
  require(width > 0, "softmax_lastdim: empty last axis");
  const std::size_t rows = x.numel() / width;
  Tensor out = make_tensor(x.shape(), false);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x.data().data() + r * width;
    float* yr = out.mutable_data().data() + r * width;
    const float mx = *std::max_element(xr, xr + width);
    double s = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      const double e = std::exp(static_cast<double>(xr[i]) - mx);
      yr[i] = static_cast<float>(e);
      s += e;
    }
    const double inv = 1.0 / s;
    for (std::size_t i = 0; i < width; ++i) yr[i] = static_cast<float>(yr[i] * inv);
  }
  check_finite(out, "softmax_lastdim");
  if (Tape* tape = tracking_tape(x)) {
    out.set_requires_grad(true);
    tape->record([xi = x.impl(), oi = out.impl(), rows, width]() {
      if (oi->grad.empty()) return;
      auto& gx = xi->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const float* y = oi->value.data() + r * width;
        const float* dy = oi->grad.data() + r * width;
        double dot = 0.0;
        for (std::size_t i = 0; i < width; ++i) dot += static_cast<double>(dy[i]) * y[i];
        for (std::size_t i = 0; i < width; ++i) {
          gx[r * width + i] += static_cast<float>(y[i] * (dy[i] - dot));
        }
      }
    });
  }
  return out;
}

// ---- resampling ---------------------------------------------------------------

Tensor maxpool1d_k2(const Tensor& x) {
  require(x.rank() == 3, "maxpool1d_k2: x must be [B, C, L], got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
  require(len % 2 == 0 && len > 0, "maxpool1d_k2: length must be even and positive, got " + std::to_string(len));
  const std::size_t half = len / 2;
  Tensor out = make_tensor({x.dim(0), x.dim(1), half}, false);
  std::vector<std::uint32_t> argmax(rows * half);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x.data().data() + r * len;
    float* yr = out.mutable_data().data() + r * half;
    for (std::size_t j = 0; j < half; ++j) {
      const bool second = xr[2 * j + 1] > xr[2 * j];
      yr[j] = second ? xr[2 * j + 1] : xr[2 * j];
      argmax[r * half + j] = static_cast<std::uint32_t>(2 * j + (second ? 1 : 0));
    }
  }
  if (Tape* tape = tracking_tape(x)) {
    out.set_requires_grad(true);
    tape->record([xi = x.impl(), oi = out.impl(), argmax = std::move(argmax), rows, len, half]() {
      if (oi->grad.empty()) return;
      auto& gx = xi->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < half; ++j) gx[r * len + argmax[r * half + j]] += oi->grad[r * half + j];
      }
    });
  }
  return out;
}

Tensor upsample_nearest_2x(const Tensor& x) {
  require(x.rank() == 3, "upsample_nearest_2x: x must be [B, C, L], got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
  Tensor out = make_tensor({x.dim(0), x.dim(1), 2 * len}, false);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x.data().data() + r * len;
    float* yr = out.mutable_data().data() + r * 2 * len;
    for (std::size_t j = 0; j < len; ++j) yr[2 * j] = yr[2 * j + 1] = xr[j];
  }
  if (Tape* tape = tracking_tape(x)) {
    out.set_requires_grad(true);
    tape->record([xi = x.impl(), oi = out.impl(), rows, len]() {
      if (oi->grad.empty()) return;
      auto& gx = xi->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const float* g = oi->grad.data() + r * 2 * len;
        for (std::size_t j = 0; j < len; ++j) gx[r * len + j] += g[2 * j] + g[2 * j + 1];
      }
    });
  }
  return out;
}

// ---- concatenation / broadcast -------------------------------------------------

namespace {

// Interleaves blocks of `wa` and `wb` floats, `outer` times.
Tensor concat_blocks(const Tensor& a, const Tensor& b, Shape out_shape, std::size_t outer, std::size_t wa,
                     std::size_t wb) {
  Tensor out = make_tensor(std::move(out_shape), false);
  float* y = out.mutable_data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.data().data() + o * wa, wa, y + o * (wa + wb));
    std::copy_n(b.data().data() + o * wb, wb, y + o * (wa + wb) + wa);
  }
  if (Tape* tape = tracking_tape(a, b)) {
    out.set_requires_grad(true);
    tape->record([ai = a.impl(), bi = b.impl(), oi = out.impl(), outer, wa, wb]() {
      if (oi->grad.empty()) return;
      for (std::size_t o = 0; o < outer; ++o) {
        const float* g = oi->grad.data() + o * (wa + wb);
        if (wants_grad(ai)) {
          float* ga = ai->grad_buffer().data() + o * wa;
          for (std::size_t i = 0; i < wa; ++i) ga[i] += g[i];
        }
        if (wants_grad(bi)) {
          float* gb = bi->grad_buffer().data() + o * wb;
          for (std::size_t i = 0; i < wb; ++i) gb[i] += g[wa + i];
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.rank() == 3 && b.rank() == 3, "concat_channels: inputs must be [B, C, L]");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2),
          "concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t L = a.dim(2);
  return concat_blocks(a, b, {a.dim(0), a.dim(1) + b.dim(1), L}, a.dim(0), a.dim(1) * L, b.dim(1) * L);
}

Tensor concat_features(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
          "concat_features: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return concat_blocks(a, b, {a.dim(0), a.dim(1) + b.dim(1)}, a.dim(0), a.dim(1), b.dim(1));
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require(x.rank() == 3 && bias.rank() == 2 && bias.dim(0) == x.dim(0) && bias.dim(1) == x.dim(1),
          "add_channel_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
  Tensor out = make_tensor(x.shape(), false);
  for (std::size_t r = 0; r < rows; ++r) {
    const float bv = bias.data()[r];
    const float* xr = x.data().data() + r * len;
    float* yr = out.mutable_data().data() + r * len;
    for (std::size_t l = 0; l < len; ++l) yr[l] = xr[l] + bv;
  }
  check_finite(out, "add_channel_bias");
  if (Tape* tape = tracking_tape(x, bias)) {
    out.set_requires_grad(true);
    tape->record([xi = x.impl(), bi = bias.impl(), oi = out.impl(), rows, len]() {
      if (oi->grad.empty()) return;
      if (wants_grad(xi)) {
        auto& gx = xi->grad_buffer();
        for (std::size_t i = 0; i < rows * len; ++i) gx[i] += oi->grad[i];
      }
      if (wants_grad(bi)) {
        auto& gb = bi->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          double acc = 0.0;
          for (std::size_t l = 0; l < len; ++l) acc += oi->grad[r * len + l];
          gb[r] += static_cast<float>(acc);
        }
      }
    });
  }
  return out;
}

Tensor scale_rows(const Tensor& x, std::span<const float> weights) {
  require(x.rank() == 2 && weights.size() == x.dim(0), "scale_rows: need one weight per row");
  const std::size_t N = x.dim(0), D = x.dim(1);
  Tensor out = make_tensor(x.shape(), false);
  for (std::size_t r = 0; r < N; ++r) {
    for (std::size_t d = 0; d < D; ++d) out.mutable_data()[r * D + d] = x.data()[r * D + d] * weights[r];
  }
  if (Tape* tape = tracking_tape(x)) {
    out.set_requires_grad(true);
    tape->record([xi = x.impl(), oi = out.impl(), w = std::vector<float>(weights.begin(), weights.end()), N, D]() {
      if (oi->grad.empty()) return;
      auto& gx = xi->grad_buffer();
      for (std::size_t r = 0; r < N; ++r) {
        for (std::size_t d = 0; d < D; ++d) gx[r * D + d] += oi->grad[r * D + d] * w[r];
      }
    });
  }
  return out;
}

// ---- bmm ------------------------------------------------------------------------

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0),
          "bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t B = a.dim(0);
  const std::size_t ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
  const std::size_t M = transpose_a ? ac : ar;
  const std::size_t K = transpose_a ? ar : ac;
  const std::size_t Kb = transpose_b ? bc : br;
  const std::size_t N = transpose_b ? br : bc;
  require(K == Kb, "bmm: inner dimensions " + std::to_string(K) + " and " + std::to_string(Kb) + " differ");

  Tensor out = make_tensor({B, M, N}, false);
  auto E = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  for (std::size_t n = 0; n < B; ++n) {
    ConstMapMat A(a.data().data() + n * ar * ac, E(ar), E(ac));
    ConstMapMat Bm(b.data().data() + n * br * bc, E(br), E(bc));
    MapMat Y(out.mutable_data().data() + n * M * N, E(M), E(N));
    if (!transpose_a && !transpose_b) Y.noalias() = A * Bm;
    else if (transpose_a && !transpose_b) Y.noalias() = A.transpose() * Bm;
    else if (!transpose_a && transpose_b) Y.noalias() = A * Bm.transpose();
    else Y.noalias() = A.transpose() * Bm.transpose();
  }
  check_finite(out, "bmm");

  if (Tape* tape = tracking_tape(a, b)) {
    out.set_requires_grad(true);
    tape->record([ai = a.impl(), bi = b.impl(), oi = out.impl(), B, ar, ac, br, bc, M, N, transpose_a, transpose_b,
                  E]() {
      if (oi->grad.empty()) return;
      for (std::size_t n = 0; n < B; ++n) {
        ConstMapMat A(ai->value.data() + n * ar * ac, E(ar), E(ac));
        ConstMapMat Bm(bi->value.data() + n * br * bc, E(br), E(bc));
        ConstMapMat G(oi->grad.data() + n * M * N, E(M), E(N));
        // op(B) is [K, N]; op(A) is [M, K].
        if (wants_grad(ai)) {
          MapMat GA(ai->grad_buffer().data() + n * ar * ac, E(ar), E(ac));
          if (!transpose_a) {
            if (transpose_b) GA.noalias() += G * Bm;
            else GA.noalias() += G * Bm.transpose();
          } else {
            if (transpose_b) GA.noalias() += Bm.transpose() * G.transpose();
            else GA.noalias() += Bm * G.transpose();
          }
        }
        if (wants_grad(bi)) {
          MapMat GB(bi->grad_buffer().data() + n * br * bc, E(br), E(bc));
          if (!transpose_b) {
            if (transpose_a) GB.noalias() += A * G;
            else GB.noalias() += A.transpose() * G;
          } else {
            if (transpose_a) GB.noalias() += G.transpose() * A.transpose();
            else GB.noalias() += G.transpose() * A;
          }
        }
      }
    });
  }
  return out;
}

// ---- embedding / reductions ---------------------------------------------------------

Tensor embedding(const Tensor& table, std::span<const int> indices) {
  require(table.rank() == 2, "embedding: table must be [V, D]");
  const std::size_t V = table.dim(0), D = table.dim(1), N = indices.size();
  for (int idx : indices) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= V) {
      throw ShapeError("embedding: index " + std::to_string(idx) + " outside table of " + std::to_string(V) + " rows");
    }
  }
  Tensor out = make_tensor({N, D}, false);
  for (std::size_t r = 0; r < N; ++r) {
    std::copy_n(table.data().data() + static_cast<std::size_t>(indices[r]) * D, D, out.mutable_data().data() + r * D);
  }
  if (Tape* tape = tracking_tape(table)) {
    out.set_requires_grad(true);
    tape->record([ti = table.impl(), oi = out.impl(), idx = std::vector<int>(indices.begin(), indices.end()), D]() {
      if (oi->grad.empty()) return;
      auto& gt = ti->grad_buffer();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        float* row = gt.data() + static_cast<std::size_t>(idx[r]) * D;
        for (std::size_t d = 0; d < D; ++d) row[d] += oi->grad[r * D + d];
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out = Tensor::from({1}, {static_cast<float>(acc)});
  check_finite(out, "sum");
  if (Tape* tape = tracking_tape(x)) {
    out.set_requires_grad(true);
    tape->record([xi = x.impl(), oi = out.impl()]() {
      if (oi->grad.empty()) return;
      auto& gx = xi->grad_buffer();
      const float g = oi->grad[0];
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  const std::size_t n = a.numel();
  require(n > 0, "mse: empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    acc += d * d;
  }
  Tensor out = Tensor::from({1}, {static_cast<float>(acc / static_cast<double>(n))});
  check_finite(out, "mse");
  if (Tape* tape = tracking_tape(a, b)) {
    out.set_requires_grad(true);
    tape->record([ai = a.impl(), bi = b.impl(), oi = out.impl(), n]() {
      if (oi->grad.empty()) return;
      const float k = 2.0f * oi->grad[0] / static_cast<float>(n);
      if (wants_grad(ai)) {
        auto& g = ai->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += k * (ai->value[i] - bi->value[i]);
      }
      if (wants_grad(bi)) {
        auto& g = bi->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] -= k * (ai->value[i] - bi->value[i]);
      }
    });
  }
  return out;
}

}  // namespace trajdiff
