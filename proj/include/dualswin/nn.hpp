#pragma once

// Tensor-level building blocks with reverse-mode gradients. Every op takes and
// returns Var handles; the backward closures accumulate into the inputs.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dualswin/autograd.hpp"
#include "dualswin/errors.hpp"
#include "dualswin/tensor.hpp"

namespace dualswin::nn {

template <class Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MatMap = Eigen::Map<RowMatrix<Real>>;
template <class Real>
using ConstMatMap = Eigen::Map<const RowMatrix<Real>>;

/// Additive value used for disallowed attention pairs.
inline constexpr double kMaskValue = -1e9;

// ---------------------------------------------------------------------------
// elementwise

template <class Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor<Real> out = a.value();
  out += b.value();
  return make_result<Real>(std::move(out), {a, b}, [](Node<Real>& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (auto* g = grad_sink(self, i)) *g += self.grad;
    }
  });
}

/// Sum of any number of same-shaped inputs.
template <class Real>
Var<Real> add_n(const std::vector<Var<Real>>& xs) {
  if (xs.empty()) throw ShapeError("add_n: no inputs");
  Tensor<Real> out = xs.front().value();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i].shape() != out.shape()) throw ShapeError("add_n: shape mismatch");
    out += xs[i].value();
  }
  return make_result<Real>(std::move(out), xs, [](Node<Real>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (auto* g = grad_sink(self, i)) *g += self.grad;
    }
  });
}

/// Scalar Σ weights·x; with empty weights, plain Σx.
template <class Real>
Var<Real> weighted_sum(const Var<Real>& x, const Tensor<Real>& weights = {}) {
  if (!weights.empty()) x.value().require_same_shape(weights, "weighted_sum");
  const auto& v = x.value();
  Real total = 0;
  for (std::size_t i = 0; i < v.size(); ++i) total += weights.empty() ? v[i] : v[i] * weights[i];
  return make_result<Real>(Tensor<Real>({1}, total), {x}, [weights](Node<Real>& self) {
    auto* g = grad_sink(self, 0);
    if (!g) return;
    const Real up = self.grad[0];
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += weights.empty() ? up : up * weights[i];
  });
}

inline double gelu_exact(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

/// GeLU, exact error-function form x·Φ(x).
template <class Real>
Var<Real> gelu(const Var<Real>& x) {
  Tensor<Real> out(x.shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const Real v = in[i];
    out[i] = Real(0.5) * v * (Real(1) + std::erf(v / Real(std::numbers::sqrt2)));
  }
  return make_result<Real>(std::move(out), {x}, [](Node<Real>& self) {
    auto* g = grad_sink(self, 0);
    if (!g) return;
    const auto& in = self.parents[0]->val();
    const Real inv_sqrt_2pi = Real(1) / std::sqrt(Real(2) * std::numbers::pi_v<Real>);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Real v = in[i];
      const Real cdf = Real(0.5) * (Real(1) + std::erf(v / Real(std::numbers::sqrt2)));
      const Real pdf = inv_sqrt_2pi * std::exp(Real(-0.5) * v * v);
      (*g)[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

template <class Real>
Var<Real> sigmoid(const Var<Real>& x) {
  Tensor<Real> out(x.shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = Real(1) / (Real(1) + std::exp(-in[i]));
  return make_result<Real>(std::move(out), {x}, [](Node<Real>& self) {
    auto* g = grad_sink(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < g->size(); ++i) {
      const Real s = self.value[i];
      (*g)[i] += self.grad[i] * s * (Real(1) - s);
    }
  });
}

/// Inverted dropout. Identity when `rate` is 0 or no generator is given.
template <class Real>
Var<Real> dropout(const Var<Real>& x, double rate, std::mt19937_64* rng) {
  if (rate <= 0.0 || rng == nullptr) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  Tensor<Real> keep(x.shape());
  std::bernoulli_distribution coin(1.0 - rate);
  const Real scale = Real(1.0 / (1.0 - rate));
  for (auto& k : keep.data()) k = coin(*rng) ? scale : Real(0);
  Tensor<Real> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= keep[i];
  return make_result<Real>(std::move(out), {x}, [keep = std::move(keep)](Node<Real>& self) {
    auto* g = grad_sink(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * keep[i];
  });
}

// ---------------------------------------------------------------------------
// linear / norm / mlp

/// out[..., j] = Σ_k x[..., k]·W[k, j] + b[j]. `b` may be undefined.
template <class Real>
Var<Real> linear(const Var<Real>& x, const Var<Real>& weight, const Var<Real>& bias = {}) {
  const auto& w = weight.value();
  if (w.rank() != 2 || x.shape().empty() || x.shape().back() != w.dim(0)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(w.shape()));
  }
  if (bias.defined() && (bias.value().rank() != 1 || bias.value().dim(0) != w.dim(1))) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match weight " +
                     to_string(w.shape()));
  }
  const std::size_t in_dim = w.dim(0);
  const std::size_t out_dim = w.dim(1);
  const std::size_t rows = x.value().size() / in_dim;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  Tensor<Real> out(out_shape);
  {
    ConstMatMap<Real> X(x.value().ptr(), rows, in_dim);
    ConstMatMap<Real> W(w.ptr(), in_dim, out_dim);
    MatMap<Real> Y(out.ptr(), rows, out_dim);
    Y.noalias() = X * W;
    if (bias.defined()) {
      Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>> B(bias.value().ptr(), out_dim);
      Y.rowwise() += B;
    }
  }
  std::vector<Var<Real>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<Real>(std::move(out), inputs, [rows, in_dim, out_dim](Node<Real>& self) {
    ConstMatMap<Real> dY(self.grad.ptr(), rows, out_dim);
    if (auto* gx = grad_sink(self, 0)) {
      ConstMatMap<Real> W(self.parents[1]->val().ptr(), in_dim, out_dim);
      MatMap<Real> dX(gx->ptr(), rows, in_dim);
      dX.noalias() += dY * W.transpose();
    }
    if (auto* gw = grad_sink(self, 1)) {
      ConstMatMap<Real> X(self.parents[0]->val().ptr(), rows, in_dim);
      MatMap<Real> dW(gw->ptr(), in_dim, out_dim);
      dW.noalias() += X.transpose() * dY;
    }
    if (self.parents.size() > 2) {
      if (auto* gb = grad_sink(self, 2)) {
        Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>> dB(gb->ptr(), out_dim);
        dB += dY.colwise().sum();
      }
    }
  });
}

/// Layer normalization over the trailing (channel) axis.
template <class Real>
Var<Real> layer_norm(const Var<Real>& x, const Var<Real>& scale, const Var<Real>& shift,
                     double eps = 1e-5) {
  const std::size_t channels = x.shape().back();
  if (scale.value().size() != channels || shift.value().size() != channels) {
    throw ShapeError("layer_norm: affine size does not match " + std::to_string(channels) +
                     " channels");
  }
  const std::size_t rows = x.value().size() / channels;
  const auto& in = x.value();
  const auto& gamma = scale.value();
  const auto& beta = shift.value();
  Tensor<Real> out(x.shape());
  Tensor<Real> normalized(x.shape());
  std::vector<Real> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = in.ptr() + r * channels;
    Real mean = 0;
    for (std::size_t c = 0; c < channels; ++c) mean += xr[c];
    mean /= Real(channels);
    Real var = 0;
    for (std::size_t c = 0; c < channels; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= Real(channels);
    const Real rstd = Real(1) / std::sqrt(var + Real(eps));
    inv_std[r] = rstd;
    for (std::size_t c = 0; c < channels; ++c) {
      const Real xhat = (xr[c] - mean) * rstd;
      normalized[r * channels + c] = xhat;
      out[r * channels + c] = xhat * gamma[c] + beta[c];
    }
  }
  return make_result<Real>(
      std::move(out), {x, scale, shift},
      [rows, channels, normalized = std::move(normalized), inv_std = std::move(inv_std)](
          Node<Real>& self) {
        const auto& gamma = self.parents[1]->val();
        auto* gx = grad_sink(self, 0);
        auto* gs = grad_sink(self, 1);
        auto* gb = grad_sink(self, 2);
        std::vector<Real> dxhat(channels);
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* dy = self.grad.ptr() + r * channels;
          const Real* xhat = normalized.ptr() + r * channels;
          Real mean_d = 0;
          Real mean_dx = 0;
          for (std::size_t c = 0; c < channels; ++c) {
            dxhat[c] = dy[c] * gamma[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xhat[c];
            if (gs) (*gs)[c] += dy[c] * xhat[c];
            if (gb) (*gb)[c] += dy[c];
          }
          if (!gx) continue;
          mean_d /= Real(channels);
          mean_dx /= Real(channels);
          Real* dx = gx->ptr() + r * channels;
          for (std::size_t c = 0; c < channels; ++c) {
            dx[c] += inv_std[r] * (dxhat[c] - mean_d - xhat[c] * mean_dx);
          }
        }
      });
}

/// Two-layer perceptron with GeLU in between.
template <class Real>
Var<Real> mlp_gelu(const Var<Real>& x, const Var<Real>& w1, const Var<Real>& b1,
                   const Var<Real>& w2, const Var<Real>& b2) {
  return linear(gelu(linear(x, w1, b1)), w2, b2);
}

/// Row-wise softmax in place over a rows×cols block, max-subtracted.
template <class Real>
void softmax_rows(Real* data, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    Real* row = data + r * cols;
    Real hi = row[0];
    for (std::size_t c = 1; c < cols; ++c) hi = std::max(hi, row[c]);
    Real total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - hi);
      total += row[c];
    }
    const Real inv = Real(1) / total;
    for (std::size_t c = 0; c < cols; ++c) row[c] *= inv;
  }
}

// ---------------------------------------------------------------------------
// spatial rearrangements on [B, H, W, C] grids

namespace detail {
inline void require_grid(const Shape& s, const char* what) {
  if (s.size() != 4) throw ShapeError(std::string(what) + ": expected [B,H,W,C], got " + to_string(s));
}

// Generic gather: out[i] = in[index[i]]; backward scatters.
template <class Real>
Var<Real> gather(const Var<Real>& x, Shape out_shape, std::vector<std::size_t> index) {
  Tensor<Real> out(std::move(out_shape));
  const auto& in = x.value();
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = in[index[i]];
  return make_result<Real>(std::move(out), {x}, [index = std::move(index)](Node<Real>& self) {
    auto* g = grad_sink(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < index.size(); ++i) (*g)[index[i]] += self.grad[i];
  });
}
}  // namespace detail

/// Toroidal roll of both spatial axes: out[(h+sh) mod H, (w+sw) mod W] = x[h, w].
template <class Real>
Var<Real> roll(const Var<Real>& x, long shift_h, long shift_w) {
  detail::require_grid(x.shape(), "roll");
  const auto [B, H, W, C] = std::array<std::size_t, 4>{x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  std::vector<std::size_t> index(x.value().size());
  const auto wrap = [](long v, std::size_t n) {
    const long m = static_cast<long>(n);
    return static_cast<std::size_t>(((v % m) + m) % m);
  };
  std::size_t i = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        const std::size_t sh = wrap(static_cast<long>(h) - shift_h, H);
        const std::size_t sw = wrap(static_cast<long>(w) - shift_w, W);
        const std::size_t base = ((b * H + sh) * W + sw) * C;
        for (std::size_t c = 0; c < C; ++c) index[i++] = base + c;
      }
  return detail::gather(x, x.shape(), std::move(index));
}

/// Rolls both spatial axes by −shift, so out[h, w] = x[h+shift, w+shift].
template <class Real>
Var<Real> cyclic_shift(const Var<Real>& x, std::size_t shift) {
  if (shift == 0) return x;
  return roll(x, -static_cast<long>(shift), -static_cast<long>(shift));
}

/// Inverse of cyclic_shift.
template <class Real>
Var<Real> cyclic_unshift(const Var<Real>& x, std::size_t shift) {
  if (shift == 0) return x;
  return roll(x, static_cast<long>(shift), static_cast<long>(shift));
}

/// [B,H,W,C] → [B·(H/w)·(W/w), w², C]; windows row-major per image, tokens
/// row-major inside each window.
template <class Real>
Var<Real> window_partition(const Var<Real>& x, std::size_t window) {
  detail::require_grid(x.shape(), "window_partition");
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (window == 0 || H % window || W % window) {
    throw ShapeError("window_partition: grid " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by window " + std::to_string(window));
  }
  const std::size_t nh = H / window, nw = W / window;
  std::vector<std::size_t> index(x.value().size());
  std::size_t i = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t wy = 0; wy < nh; ++wy)
      for (std::size_t wx = 0; wx < nw; ++wx)
        for (std::size_t ty = 0; ty < window; ++ty)
          for (std::size_t tx = 0; tx < window; ++tx) {
            const std::size_t base = ((b * H + wy * window + ty) * W + wx * window + tx) * C;
            for (std::size_t c = 0; c < C; ++c) index[i++] = base + c;
          }
  return detail::gather(x, Shape{B * nh * nw, window * window, C}, std::move(index));
}

/// Inverse of window_partition for a grid of size [batch, height, width, C].
template <class Real>
Var<Real> window_reverse(const Var<Real>& windows, std::size_t window, std::size_t batch,
                         std::size_t height, std::size_t width) {
  const auto& s = windows.shape();
  if (window == 0 || height % window || width % window || s.size() != 3 ||
      s[0] != batch * (height / window) * (width / window) || s[1] != window * window) {
    throw ShapeError("window_reverse: windows " + to_string(s) + " do not tile a " +
                     std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  const std::size_t C = s[2], nh = height / window, nw = width / window;
  std::vector<std::size_t> index(windows.value().size());
  std::size_t i = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t win = (b * nh + y / window) * nw + x / window;
        const std::size_t tok = (y % window) * window + x % window;
        const std::size_t base = (win * window * window + tok) * C;
        for (std::size_t c = 0; c < C; ++c) index[i++] = base + c;
      }
  return detail::gather(windows, Shape{batch, height, width, C}, std::move(index));
}

/// [B,H,W,C] → [B,H/f,W/f,f²C]. Sub-position (dy, dx) of each f×f block goes
/// to channel block dy + f·dx, i.e. (0,0),(1,0),(0,1),(1,1) for f = 2.
template <class Real>
Var<Real> space_to_depth(const Var<Real>& x, std::size_t factor) {
  detail::require_grid(x.shape(), "space_to_depth");
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (factor == 0 || H % factor || W % factor) {
    throw ShapeError("space_to_depth: grid " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by " + std::to_string(factor));
  }
  const std::size_t oh = H / factor, ow = W / factor;
  std::vector<std::size_t> index(x.value().size());
  std::size_t i = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        for (std::size_t dx = 0; dx < factor; ++dx)
          for (std::size_t dy = 0; dy < factor; ++dy) {
            const std::size_t base = ((b * H + y * factor + dy) * W + xx * factor + dx) * C;
            for (std::size_t c = 0; c < C; ++c) index[i++] = base + c;
          }
  return detail::gather(x, Shape{B, oh, ow, factor * factor * C}, std::move(index));
}

/// Inverse of space_to_depth: [B,H,W,f²C] → [B,fH,fW,C].
template <class Real>
Var<Real> depth_to_space(const Var<Real>& x, std::size_t factor) {
  detail::require_grid(x.shape(), "depth_to_space");
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), CC = x.dim(3);
  if (factor == 0 || CC % (factor * factor)) {
    throw ShapeError("depth_to_space: " + std::to_string(CC) + " channels not divisible by " +
                     std::to_string(factor * factor));
  }
  const std::size_t C = CC / (factor * factor);
  const std::size_t oh = H * factor, ow = W * factor;
  std::vector<std::size_t> index(x.value().size());
  std::size_t i = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const std::size_t block = (y % factor) + factor * (xx % factor);
        const std::size_t base = ((b * H + y / factor) * W + xx / factor) * CC + block * C;
        for (std::size_t c = 0; c < C; ++c) index[i++] = base + c;
      }
  return detail::gather(x, Shape{B, oh, ow, C}, std::move(index));
}

/// Concatenation along the trailing axis; leading dims must agree.
template <class Real>
Var<Real> concat_channels(const std::vector<Var<Real>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  if (xs.size() == 1) return xs.front();
  Shape lead = xs.front().shape();
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& x : xs) {
    Shape l = x.shape();
    const std::size_t w = l.back();
    l.pop_back();
    if (l != lead) {
      throw ShapeError("concat_channels: leading dims " + to_string(l) + " vs " + to_string(lead));
    }
    widths.push_back(w);
    total += w;
  }
  const std::size_t rows = shape_size(lead);
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor<Real> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& v = xs[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.ptr() + r * widths[k], widths[k], out.ptr() + r * total + offset);
    }
    offset += widths[k];
  }
  return make_result<Real>(std::move(out), xs, [rows, total, widths](Node<Real>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (auto* g = grad_sink(self, k)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c)
            (*g)[r * widths[k] + c] += self.grad[r * total + offset + c];
      }
      offset += widths[k];
    }
  });
}

// ---------------------------------------------------------------------------
// shifted-window attention

/// Additive mask [num_windows, w², w²] for attention on a grid that was
/// cyclically shifted by `shift`: 0 where both tokens come from the same
/// contiguous pre-shift region, kMaskValue otherwise.
template <class Real>
Tensor<Real> build_shift_mask(std::size_t height, std::size_t width, std::size_t window,
                              std::size_t shift) {
  if (window == 0 || height % window || width % window) {
    throw ShapeError("build_shift_mask: grid " + std::to_string(height) + "x" +
                     std::to_string(width) + " not divisible by window " + std::to_string(window));
  }
  if (shift >= window) throw ShapeError("build_shift_mask: shift must be smaller than window");
  const std::size_t nh = height / window, nw = width / window, n = window * window;
  Tensor<Real> mask({nh * nw, n, n});
  if (shift == 0) return mask;
  const auto region = [&](std::size_t pos, std::size_t extent) -> int {
    if (pos < extent - window) return 0;
    if (pos < extent - shift) return 1;
    return 2;
  };
  std::vector<int> label(height * width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) label[y * width + x] = region(y, height) * 3 + region(x, width);
  for (std::size_t wy = 0; wy < nh; ++wy)
    for (std::size_t wx = 0; wx < nw; ++wx) {
      Real* m = mask.ptr() + (wy * nw + wx) * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        const int li = label[(wy * window + i / window) * width + wx * window + i % window];
        for (std::size_t j = 0; j < n; ++j) {
          const int lj = label[(wy * window + j / window) * width + wx * window + j % window];
          m[i * n + j] = li == lj ? Real(0) : Real(kMaskValue);
        }
      }
    }
  return mask;
}

/// index[i·w² + j] into a (2w−1)² relative-position table for tokens i, j.
inline std::vector<std::size_t> relative_position_index(std::size_t window) {
  const std::size_t n = window * window, span = 2 * window - 1;
  std::vector<std::size_t> index(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t dy = i / window + window - 1 - j / window;
      const std::size_t dx = i % window + window - 1 - j % window;
      index[i * n + j] = dy * span + dx;
    }
  return index;
}

/// Multi-head scaled dot-product attention inside each window.
///
/// `qkv` is [M, N, 3C] with channel layout [q | k | v], each split into
/// `heads` contiguous chunks. `bias_table` ([(2w−1)², heads]) may be undefined;
/// `mask` ([num_windows, N, N]) may be empty, in which case window m uses
/// mask slice m mod num_windows. Returns the concatenated heads, [M, N, C].
template <class Real>
Var<Real> attention_core(const Var<Real>& qkv, std::size_t heads, const Var<Real>& bias_table,
                         const std::vector<std::size_t>& bias_index, const Tensor<Real>& mask) {
  const auto& s = qkv.shape();
  if (s.size() != 3 || s[2] % 3) throw ShapeError("attention_core: qkv must be [M,N,3C], got " + to_string(s));
  const std::size_t M = s[0], N = s[1], C = s[2] / 3;
  if (heads == 0 || C % heads) {
    throw ShapeError("attention_core: " + std::to_string(C) + " channels not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const bool use_bias = bias_table.defined();
  if (use_bias && (bias_table.value().rank() != 2 || bias_table.value().dim(1) != heads ||
                   bias_index.size() != N * N)) {
    throw ShapeError("attention_core: relative position table does not match window/heads");
  }
  const std::size_t num_mask = mask.empty() ? 0 : mask.dim(0);
  if (num_mask && (mask.dim(1) != N || mask.dim(2) != N || M % num_mask)) {
    throw ShapeError("attention_core: mask " + to_string(mask.shape()) + " incompatible with windows");
  }
  const std::size_t d = C / heads;
  const Real scale = Real(1) / std::sqrt(Real(d));
  using Stride = Eigen::OuterStride<>;
  using ConstBlock = Eigen::Map<const RowMatrix<Real>, 0, Stride>;
  using Block = Eigen::Map<RowMatrix<Real>, 0, Stride>;

  Tensor<Real> out({M, N, C});
  Tensor<Real> probs({M, heads, N, N});
  const Real* src = qkv.value().ptr();
  for (std::size_t m = 0; m < M; ++m) {
    const Real* base = src + m * N * 3 * C;
    const Real* msk = num_mask ? mask.ptr() + (m % num_mask) * N * N : nullptr;
    for (std::size_t h = 0; h < heads; ++h) {
      ConstBlock Q(base + h * d, N, d, Stride(3 * C));
      ConstBlock K(base + C + h * d, N, d, Stride(3 * C));
      ConstBlock V(base + 2 * C + h * d, N, d, Stride(3 * C));
      Real* p = probs.ptr() + (m * heads + h) * N * N;
      MatMap<Real> P(p, N, N);
      P.noalias() = scale * (Q * K.transpose());
      if (use_bias) {
        const auto& table = bias_table.value();
        for (std::size_t k = 0; k < N * N; ++k) p[k] += table[bias_index[k] * heads + h];
      }
      if (msk) {
        for (std::size_t k = 0; k < N * N; ++k) p[k] += msk[k];
      }
      softmax_rows(p, N, N);
      Block O(out.ptr() + m * N * C + h * d, N, d, Stride(C));
      O.noalias() = P * V;
    }
  }
  std::vector<Var<Real>> inputs{qkv};
  if (use_bias) inputs.push_back(bias_table);
  return make_result<Real>(
      std::move(out), inputs,
      [M, N, C, heads, d, scale, use_bias, bias_index, probs = std::move(probs)](Node<Real>& self) {
        auto* gqkv = grad_sink(self, 0);
        Tensor<Real>* gtable = use_bias ? grad_sink(self, 1) : nullptr;
        if (!gqkv && !gtable) return;
        const Real* src = self.parents[0]->val().ptr();
        RowMatrix<Real> dP(N, N);
        for (std::size_t m = 0; m < M; ++m) {
          const Real* base = src + m * N * 3 * C;
          for (std::size_t h = 0; h < heads; ++h) {
            ConstBlock Q(base + h * d, N, d, Stride(3 * C));
            ConstBlock K(base + C + h * d, N, d, Stride(3 * C));
            ConstBlock V(base + 2 * C + h * d, N, d, Stride(3 * C));
            ConstBlock dO(self.grad.ptr() + m * N * C + h * d, N, d, Stride(C));
            ConstMatMap<Real> P(probs.ptr() + (m * heads + h) * N * N, N, N);
            dP.noalias() = dO * V.transpose();
            // softmax backward: dS = P ⊙ (dP − rowsum(dP ⊙ P))
            for (std::size_t i = 0; i < N; ++i) {
              Real dot = 0;
              for (std::size_t j = 0; j < N; ++j) dot += dP(i, j) * P(i, j);
              for (std::size_t j = 0; j < N; ++j) dP(i, j) = P(i, j) * (dP(i, j) - dot);
            }
            if (gtable) {
              for (std::size_t k = 0; k < N * N; ++k) {
                (*gtable)[bias_index[k] * heads + h] += dP.data()[k];
              }
            }
            if (gqkv) {
              Real* gbase = gqkv->ptr() + m * N * 3 * C;
              Block dQ(gbase + h * d, N, d, Stride(3 * C));
              Block dK(gbase + C + h * d, N, d, Stride(3 * C));
              Block dV(gbase + 2 * C + h * d, N, d, Stride(3 * C));
              dV.noalias() += P.transpose() * dO;
              dQ.noalias() += scale * (dP * K);
              dK.noalias() += scale * (dP.transpose() * Q);
            }
          }
        }
      });
}

/// Full window attention: qkv projection, per-head masked softmax attention
/// with optional relative-position bias, output projection.
template <class Real>
Var<Real> window_attention(const Var<Real>& windows, const Var<Real>& qkv_weight,
                           const Var<Real>& qkv_bias, const Var<Real>& proj_weight,
                           const Var<Real>& proj_bias, std::size_t heads, const Var<Real>& bias_table,
                           const std::vector<std::size_t>& bias_index, const Tensor<Real>& mask) {
  const Var<Real> qkv = linear(windows, qkv_weight, qkv_bias);
  return linear(attention_core(qkv, heads, bias_table, bias_index, mask), proj_weight, proj_bias);
}

// ---------------------------------------------------------------------------
// initialisation

/// Normal(0, std) truncated to ±2 std by resampling.
template <class Real>
Tensor<Real> truncated_normal(Shape shape, double std, std::mt19937_64& rng) {
  Tensor<Real> t(std::move(shape));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : t.data()) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    v = static_cast<Real>(z * std);
  }
  return t;
}

}  // namespace dualswin::nn
