#pragma once

// Composite blocks: Swin attention blocks, patch embedding, patch merging,
// patch expanding and the final full-resolution expansion.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dualswin/autograd.hpp"
#include "dualswin/errors.hpp"
#include "dualswin/nn.hpp"
#include "dualswin/tensor.hpp"

namespace dualswin {

inline constexpr double kInitStd = 0.02;
inline constexpr double kNormEps = 1e-5;

namespace init {

template <class Real>
Parameter<Real>* weight(ParameterStore<Real>& store, const std::string& name, Shape shape,
                        std::mt19937_64& rng) {
  return store.add(name, nn::truncated_normal<Real>(std::move(shape), kInitStd, rng));
}
template <class Real>
Parameter<Real>* zeros(ParameterStore<Real>& store, const std::string& name, Shape shape) {
  return store.add(name, Tensor<Real>(std::move(shape)));
}
template <class Real>
Parameter<Real>* ones(ParameterStore<Real>& store, const std::string& name, Shape shape) {
  return store.add(name, Tensor<Real>(std::move(shape), Real(1)));
}

}  // namespace init

template <class Real>
Var<Real> param_var(Parameter<Real>* p) {
  return p ? Var<Real>::param(*p) : Var<Real>{};
}

// ---------------------------------------------------------------------------
// stateless composite ops

/// Flattens every patch×patch tile into patch²·C_in values and projects them
/// to the embedding width.
template <class Real>
Var<Real> patch_embed(const Var<Real>& image, std::size_t patch, const Var<Real>& weight,
                      const Var<Real>& bias) {
  return nn::linear(nn::space_to_depth(image, patch), weight, bias);
}

/// [B,H,W,C] → [B,H/2,W/2,2C]: concatenate each 2×2 neighbourhood in the order
/// (0,0),(1,0),(0,1),(1,1), layer-normalise the 4C vector, project to 2C.
/// Leaving the norm Vars undefined skips normalisation.
template <class Real>
Var<Real> patch_merge(const Var<Real>& x, const Var<Real>& norm_scale, const Var<Real>& norm_shift,
                      const Var<Real>& weight) {
  if (x.shape().size() != 4 || x.dim(1) % 2 || x.dim(2) % 2) {
    throw ShapeError("patch_merge: spatial dims must be even, got " + to_string(x.shape()));
  }
  Var<Real> packed = nn::space_to_depth(x, 2);
  if (norm_scale.defined()) packed = nn::layer_norm(packed, norm_scale, norm_shift, kNormEps);
  return nn::linear(packed, weight);
}

/// [B,H,W,C] → [B,2H,2W,C/2]: project C → 2C, unpack each token into a 2×2
/// block (inverse of the patch_merge order), then layer-normalise.
template <class Real>
Var<Real> patch_expand(const Var<Real>& x, const Var<Real>& weight, const Var<Real>& norm_scale,
                       const Var<Real>& norm_shift) {
  if (x.shape().size() != 4 || x.dim(3) % 2) {
    throw ShapeError("patch_expand: channel count must be even, got " + to_string(x.shape()));
  }
  Var<Real> up = nn::depth_to_space(nn::linear(x, weight), 2);
  if (norm_scale.defined()) up = nn::layer_norm(up, norm_scale, norm_shift, kNormEps);
  return up;
}

/// [B,H,W,C] → [B,fH,fW,C] via a C → f²C projection and an f×f unpack.
template <class Real>
Var<Real> final_expand(const Var<Real>& x, std::size_t factor, const Var<Real>& weight) {
  return nn::depth_to_space(nn::linear(x, weight), factor);
}

/// (S)W-MSA on a [B,H,W,C] grid: roll by −shift, attend inside each window
/// under `mask`, roll back. Shift 0 is plain W-MSA.
template <class Real>
Var<Real> shifted_window_attention(const Var<Real>& x, std::size_t window, std::size_t shift,
                                   const Var<Real>& qkv_weight, const Var<Real>& qkv_bias,
                                   const Var<Real>& proj_weight, const Var<Real>& proj_bias, std::size_t heads,
                                   const Var<Real>& bias_table, const std::vector<std::size_t>& bias_index,
                                   const Tensor<Real>& mask) {
  const auto& s = x.shape();
  Var<Real> h = nn::window_partition(nn::cyclic_shift(x, shift), window);
  h = nn::window_attention(h, qkv_weight, qkv_bias, proj_weight, proj_bias, heads, bias_table, bias_index, mask);
  return nn::cyclic_unshift(nn::window_reverse(h, window, s[0], s[1], s[2]), shift);
}

// ---------------------------------------------------------------------------
// modules holding parameters

/// One attention sub-block: x + Attn(LN(x)), then + MLP(LN(·)). With a
/// nonzero shift the attention runs on the cyclically shifted grid under the
/// region mask.
template <class Real>
class SwinBlock {
 public:
  SwinBlock(ParameterStore<Real>& store, const std::string& prefix, int resolution, int channels,
            int heads, int window, int shift, double mlp_ratio, bool relative_bias, double drop_rate,
            std::mt19937_64& rng)
      : resolution_(resolution), heads_(heads), window_(window), shift_(shift), drop_rate_(drop_rate) {
    if (resolution % window) {
      throw ValidationError(prefix + ": resolution " + std::to_string(resolution) +
                            " not divisible by window " + std::to_string(window));
    }
    if (channels % heads) throw ValidationError(prefix + ": channels not divisible by heads");
    const std::size_t C = channels;
    const auto hidden = static_cast<std::size_t>(mlp_ratio * channels);
    norm1_scale_ = init::ones(store, prefix + ".norm1.scale", {C});
    norm1_shift_ = init::zeros(store, prefix + ".norm1.shift", {C});
    qkv_weight_ = init::weight(store, prefix + ".attn.qkv.weight", {C, 3 * C}, rng);
    qkv_bias_ = init::zeros(store, prefix + ".attn.qkv.bias", {3 * C});
    if (relative_bias) {
      const std::size_t span = 2 * window - 1;
      bias_table_ = init::weight(store, prefix + ".attn.relative_position_bias",
                                 {span * span, static_cast<std::size_t>(heads)}, rng);
      bias_index_ = nn::relative_position_index(window);
    }
    proj_weight_ = init::weight(store, prefix + ".attn.proj.weight", {C, C}, rng);
    proj_bias_ = init::zeros(store, prefix + ".attn.proj.bias", {C});
    norm2_scale_ = init::ones(store, prefix + ".norm2.scale", {C});
    norm2_shift_ = init::zeros(store, prefix + ".norm2.shift", {C});
    fc1_weight_ = init::weight(store, prefix + ".mlp.fc1.weight", {C, hidden}, rng);
    fc1_bias_ = init::zeros(store, prefix + ".mlp.fc1.bias", {hidden});
    fc2_weight_ = init::weight(store, prefix + ".mlp.fc2.weight", {hidden, C}, rng);
    fc2_bias_ = init::zeros(store, prefix + ".mlp.fc2.bias", {C});
    if (shift_ > 0) mask_ = nn::build_shift_mask<Real>(resolution, resolution, window, shift);
  }

  int shift() const { return shift_; }

  Var<Real> forward(const Var<Real>& x, std::mt19937_64* rng = nullptr) const {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != std::size_t(resolution_) || s[2] != std::size_t(resolution_)) {
      throw ShapeError("swin block expects [B," + std::to_string(resolution_) + "," +
                       std::to_string(resolution_) + ",C], got " + to_string(s));
    }
    Var<Real> h = nn::layer_norm(x, param_var(norm1_scale_), param_var(norm1_shift_), kNormEps);
    h = shifted_window_attention(h, window_, shift_, param_var(qkv_weight_), param_var(qkv_bias_),
                                 param_var(proj_weight_), param_var(proj_bias_), heads_,
                                 param_var(bias_table_), bias_index_, mask_);
    Var<Real> y = nn::add(x, nn::dropout(h, drop_rate_, rng));
    Var<Real> m = nn::layer_norm(y, param_var(norm2_scale_), param_var(norm2_shift_), kNormEps);
    m = nn::mlp_gelu(m, param_var(fc1_weight_), param_var(fc1_bias_), param_var(fc2_weight_),
                     param_var(fc2_bias_));
    return nn::add(y, nn::dropout(m, drop_rate_, rng));
  }

 private:
  int resolution_, heads_, window_, shift_;
  double drop_rate_;
  Parameter<Real>*norm1_scale_, *norm1_shift_, *qkv_weight_, *qkv_bias_, *proj_weight_, *proj_bias_;
  Parameter<Real>*norm2_scale_, *norm2_shift_, *fc1_weight_, *fc1_bias_, *fc2_weight_, *fc2_bias_;
  Parameter<Real>* bias_table_ = nullptr;
  std::vector<std::size_t> bias_index_;
  Tensor<Real> mask_;
};

/// A run of `depth` Swin blocks alternating plain and shifted windows; depth 2
/// is one W-MSA/SW-MSA pair. When the whole grid fits in one window the shift
/// is dropped, as there is nothing to shift across.
template <class Real>
class SwinStage {
 public:
  SwinStage(ParameterStore<Real>& store, const std::string& prefix, int depth, int resolution,
            int channels, int heads, int window, double mlp_ratio, bool relative_bias, double drop_rate,
            std::mt19937_64& rng) {
    const int half = resolution <= window ? 0 : window / 2;
    for (int i = 0; i < depth; ++i) {
      blocks_.emplace_back(store, prefix + ".block" + std::to_string(i), resolution, channels, heads,
                           window, i % 2 ? half : 0, mlp_ratio, relative_bias, drop_rate, rng);
    }
  }

  Var<Real> forward(Var<Real> x, std::mt19937_64* rng = nullptr) const {
    for (const auto& b : blocks_) x = b.forward(x, rng);
    return x;
  }

  const std::vector<SwinBlock<Real>>& blocks() const { return blocks_; }

 private:
  std::vector<SwinBlock<Real>> blocks_;
};

template <class Real>
class PatchEmbed {
 public:
  PatchEmbed(ParameterStore<Real>& store, const std::string& prefix, int patch, int in_channels,
             int embed_dim, std::mt19937_64& rng)
      : patch_(patch) {
    const std::size_t in = std::size_t(patch) * patch * in_channels;
    weight_ = init::weight(store, prefix + ".weight", {in, std::size_t(embed_dim)}, rng);
    bias_ = init::zeros(store, prefix + ".bias", {std::size_t(embed_dim)});
  }
  Var<Real> forward(const Var<Real>& image) const {
    return patch_embed(image, patch_, param_var(weight_), param_var(bias_));
  }

 private:
  std::size_t patch_;
  Parameter<Real>*weight_, *bias_;
};

template <class Real>
class PatchMerge {
 public:
  PatchMerge(ParameterStore<Real>& store, const std::string& prefix, int channels, std::mt19937_64& rng) {
    const std::size_t C = channels;
    norm_scale_ = init::ones(store, prefix + ".norm.scale", {4 * C});
    norm_shift_ = init::zeros(store, prefix + ".norm.shift", {4 * C});
    weight_ = init::weight(store, prefix + ".weight", {4 * C, 2 * C}, rng);
  }
  Var<Real> forward(const Var<Real>& x) const {
    return patch_merge(x, param_var(norm_scale_), param_var(norm_shift_), param_var(weight_));
  }

 private:
  Parameter<Real>*norm_scale_, *norm_shift_, *weight_;
};

template <class Real>
class PatchExpand {
 public:
  PatchExpand(ParameterStore<Real>& store, const std::string& prefix, int channels, std::mt19937_64& rng) {
    const std::size_t C = channels;
    weight_ = init::weight(store, prefix + ".weight", {C, 2 * C}, rng);
    norm_scale_ = init::ones(store, prefix + ".norm.scale", {C / 2});
    norm_shift_ = init::zeros(store, prefix + ".norm.shift", {C / 2});
  }
  Var<Real> forward(const Var<Real>& x) const {
    return patch_expand(x, param_var(weight_), param_var(norm_scale_), param_var(norm_shift_));
  }

 private:
  Parameter<Real>*weight_, *norm_scale_, *norm_shift_;
};

template <class Real>
class FinalExpand {
 public:
  FinalExpand(ParameterStore<Real>& store, const std::string& prefix, int channels, int factor,
              std::mt19937_64& rng)
      : factor_(factor) {
    const std::size_t C = channels;
    weight_ = init::weight(store, prefix + ".weight", {C, std::size_t(factor) * factor * C}, rng);
  }
  Var<Real> forward(const Var<Real>& x) const { return final_expand(x, factor_, param_var(weight_)); }

 private:
  std::size_t factor_;
  Parameter<Real>* weight_;
};

/// Plain affine projection over the channel axis.
template <class Real>
class Linear {
 public:
  Linear(ParameterStore<Real>& store, const std::string& prefix, int in, int out, std::mt19937_64& rng) {
    weight_ = init::weight(store, prefix + ".weight", {std::size_t(in), std::size_t(out)}, rng);
    bias_ = init::zeros(store, prefix + ".bias", {std::size_t(out)});
  }
  Var<Real> forward(const Var<Real>& x) const { return nn::linear(x, param_var(weight_), param_var(bias_)); }

 private:
  Parameter<Real>*weight_, *bias_;
};

}  // namespace dualswin
