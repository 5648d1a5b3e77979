#pragma once

// Brute-force reference for shifted-window attention, written directly in
// original grid coordinates: token i attends to token j iff both land in the
// same window after a cyclic shift by `shift` and both come from the same
// contiguous region of the unshifted grid. No rolling, partitioning or mask
// tensors are involved.

#include <cmath>
#include <cstddef>
#include <vector>

#include "dualswin/tensor.hpp"

namespace dualswin::testing {

struct AttentionWeights {
  Tensor<double> qkv_weight;   // [C, 3C]
  Tensor<double> qkv_bias;     // [3C]
  Tensor<double> proj_weight;  // [C, C]
  Tensor<double> proj_bias;    // [C]
  Tensor<double> bias_table;   // [(2w-1)^2, heads]; empty for no bias
};

/// x is [B, H, W, C]; returns the attention branch output, [B, H, W, C].
inline Tensor<double> brute_force_shifted_attention(const Tensor<double>& x, const AttentionWeights& p,
                                                    std::size_t heads, std::size_t window, std::size_t shift) {
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3), d = C / heads;
  const std::size_t T = H * W, span = 2 * window - 1;
  const auto wrap = [](long v, long n) { return static_cast<std::size_t>(((v % n) + n) % n); };
  const auto region = [&](std::size_t pos, std::size_t extent) {
    return pos < extent - window ? 0 : (pos < extent - shift ? 1 : 2);
  };
  Tensor<double> out({B, H, W, C});
  std::vector<double> q(T * C), k(T * C), v(T * C), ctx(T * C);
  for (std::size_t b = 0; b < B; ++b) {
    const double* xb = x.ptr() + b * T * C;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t o = 0; o < 3 * C; ++o) {
        double acc = p.qkv_bias[o];
        for (std::size_t i = 0; i < C; ++i) acc += xb[t * C + i] * p.qkv_weight[i * 3 * C + o];
        (o < C ? q[t * C + o] : o < 2 * C ? k[t * C + o - C] : v[t * C + o - 2 * C]) = acc;
      }
    for (std::size_t ti = 0; ti < T; ++ti) {
      const long ri = ti / W, ci = ti % W;
      const std::size_t si = wrap(ri - long(shift), H), sj = wrap(ci - long(shift), W);
      for (std::size_t h = 0; h < heads; ++h) {
        std::vector<std::size_t> keys;
        std::vector<double> logits;
        for (std::size_t tj = 0; tj < T; ++tj) {
          const long rj = tj / W, cj = tj % W;
          const std::size_t ui = wrap(rj - long(shift), H), uj = wrap(cj - long(shift), W);
          if (ui / window != si / window || uj / window != sj / window) continue;
          if (region(ui, H) != region(si, H) || region(uj, W) != region(sj, W)) continue;
          double s = 0;
          for (std::size_t e = 0; e < d; ++e) s += q[ti * C + h * d + e] * k[tj * C + h * d + e];
          s /= std::sqrt(static_cast<double>(d));
          if (!p.bias_table.empty()) {
            // same region ⇒ no wrap between the two tokens, so the original offset is the in-window offset
            const std::size_t dy = ri - rj + window - 1, dx = ci - cj + window - 1;
            s += p.bias_table[(dy * span + dx) * heads + h];
          }
          keys.push_back(tj);
          logits.push_back(s);
        }
        double mx = logits[0];
        for (double s : logits) mx = std::max(mx, s);
        double z = 0;
        for (double& s : logits) z += (s = std::exp(s - mx));
        for (std::size_t e = 0; e < d; ++e) {
          double acc = 0;
          for (std::size_t n = 0; n < keys.size(); ++n) acc += logits[n] / z * v[keys[n] * C + h * d + e];
          ctx[ti * C + h * d + e] = acc;
        }
      }
    }
    double* ob = out.ptr() + b * T * C;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t o = 0; o < C; ++o) {
        double acc = p.proj_bias[o];
        for (std::size_t i = 0; i < C; ++i) acc += ctx[t * C + i] * p.proj_weight[i * C + o];
        ob[t * C + o] = acc;
      }
  }
  return out;
}

}  // namespace dualswin::testing
