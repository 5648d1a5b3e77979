#pragma once

// Shared Swin encoder, bottleneck, thyroid decoder (decoder 1) and PTMC
// decoder (decoder 2). Decoder 2 receives decoder 1's stage outputs as extra
// skip inputs; each decoder owns its own projection head.

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualswin/autograd.hpp"
#include "dualswin/config.hpp"
#include "dualswin/nn.hpp"
#include "dualswin/stages.hpp"

namespace dualswin {

/// Which skip connections are active. Index 0 is the shallowest stage.
struct SkipWiring {
  std::vector<bool> encoder_to_thyroid;
  std::vector<bool> into_ptmc;

  int count() const {
    int n = 0;
    for (bool b : encoder_to_thyroid) n += b;
    for (bool b : into_ptmc) n += b;
    return n;
  }
  friend bool operator==(const SkipWiring&, const SkipWiring&) = default;
};

/// Enables `n` of the 2·stages skips: encoder→decoder-1 shallow to deep first,
/// then the (encoder + decoder-1)→decoder-2 skips shallow to deep.
inline SkipWiring count_skips_wiring(int n, int num_stages = 3) {
  if (num_stages < 1) throw std::invalid_argument("count_skips_wiring: need at least one stage");
  if (n < 0 || n > 2 * num_stages) {
    throw std::out_of_range("skip connection count " + std::to_string(n) + " outside [0, " +
                            std::to_string(2 * num_stages) + "]");
  }
  SkipWiring w;
  w.encoder_to_thyroid.assign(num_stages, false);
  w.into_ptmc.assign(num_stages, false);
  for (int s = 0; s < num_stages; ++s) {
    w.encoder_to_thyroid[s] = s < n;
    w.into_ptmc[s] = s < n - num_stages;
  }
  return w;
}

template <class Real>
struct Encoding {
  Var<Real> bottleneck;
  std::vector<Var<Real>> skips;  // per encoder stage, after its Swin blocks
};

template <class Real>
struct ThyroidDecoding {
  Var<Real> logits;
  std::vector<Var<Real>> features;  // per stage (shallow first), after the Swin blocks
};

/// Per-pixel logits of both decoders, [B, img, img, 1]. Without the dual
/// decoder only `ptmc_logits` is set (the single decoder predicts PTMC).
template <class Real>
struct DualPrediction {
  Var<Real> thyroid_logits;
  Var<Real> ptmc_logits;
  std::vector<Var<Real>> thyroid_features;
};

template <class Real>
class DualSwinUnet {
 public:
  DualSwinUnet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    validate(cfg_);
    wiring_ = count_skips_wiring(cfg_.skip_connection_count, cfg_.num_stages());
    std::mt19937_64 rng(seed);
    const int S = cfg_.num_stages();
    const auto stage = [&](const std::string& prefix, int depth, int s) {
      return SwinStage<Real>(params_, prefix, depth, cfg_.stage_resolution(s), cfg_.stage_channels(s),
                             cfg_.num_heads[s], cfg_.window_size, cfg_.mlp_ratio, cfg_.relative_position_bias,
                             cfg_.drop_rate, rng);
    };

    embed_.emplace(params_, "patch_embed", cfg_.patch_size, cfg_.in_channels, cfg_.embed_dim, rng);
    for (int s = 0; s < S; ++s) {
      const std::string p = "encoder" + std::to_string(s);
      encoder_.push_back(stage(p, cfg_.encoder_depths[s], s));
      merges_.emplace_back(params_, p + ".merge", cfg_.stage_channels(s), rng);
    }
    bottleneck_.emplace(stage("bottleneck", cfg_.bottleneck_depth, S));

    const bool additive = cfg_.skip_fusion_mode == SkipFusion::additive;
    const auto build_decoder = [&](const std::string& name, bool ptmc) {
      Decoder d;
      for (int s = S - 1; s >= 0; --s) {
        const std::string p = name + ".stage" + std::to_string(s);
        int inputs = 1;
        if (!additive) {
          if (!ptmc && wiring_.encoder_to_thyroid[s]) inputs = 2;
          if (ptmc && wiring_.into_ptmc[s]) inputs = cfg_.ptmc_encoder_skip ? 3 : 2;
        }
        const int C = cfg_.stage_channels(s);
        d.expand.emplace_back(params_, p + ".expand", cfg_.stage_channels(s + 1), rng);
        d.fuse.emplace_back(params_, p + ".fuse", inputs * C, C, rng);
        d.blocks.push_back(stage(p, cfg_.decoder_depths[s], s));
      }
      d.final_expand.emplace(params_, name + ".final_expand", cfg_.embed_dim, cfg_.patch_size, rng);
      return d;
    };
    decoder1_ = build_decoder("decoder1", false);
    head1_.emplace(params_, "head1", cfg_.embed_dim, 1, rng);
    if (cfg_.dual_decoder) {
      decoder2_ = build_decoder("decoder2", true);
      head2_.emplace(params_, "head2", cfg_.embed_dim, 1, rng);
    }
  }

  DualSwinUnet(const DualSwinUnet&) = delete;
  DualSwinUnet& operator=(const DualSwinUnet&) = delete;
  DualSwinUnet(DualSwinUnet&&) noexcept = default;
  DualSwinUnet& operator=(DualSwinUnet&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  const SkipWiring& wiring() const { return wiring_; }
  ParameterStore<Real>& parameters() { return params_; }
  const ParameterStore<Real>& parameters() const { return params_; }

  Encoding<Real> encode(const Var<Real>& image, std::mt19937_64* rng = nullptr) const {
    const auto& s = image.shape();
    const std::size_t img = cfg_.img_size;
    if (s.size() != 4 || s[1] != img || s[2] != img || s[3] != std::size_t(cfg_.in_channels)) {
      throw ShapeError("encode: expected [B," + std::to_string(img) + "," + std::to_string(img) + "," +
                       std::to_string(cfg_.in_channels) + "], got " + to_string(s));
    }
    Encoding<Real> out;
    Var<Real> x = embed_->forward(image);
    for (std::size_t st = 0; st < encoder_.size(); ++st) {
      x = encoder_[st].forward(x, rng);
      out.skips.push_back(x);
      x = merges_[st].forward(x);
    }
    out.bottleneck = bottleneck_->forward(x, rng);
    return out;
  }

  ThyroidDecoding<Real> decode_thyroid(const Encoding<Real>& enc, std::mt19937_64* rng = nullptr) const {
    check_encoding(enc);
    const int S = cfg_.num_stages();
    ThyroidDecoding<Real> out;
    out.features.resize(S);
    Var<Real> x = enc.bottleneck;
    for (int s = S - 1; s >= 0; --s) {
      const std::size_t k = S - 1 - s;
      x = decoder1_.expand[k].forward(x);
      std::vector<Var<Real>> parts{x};
      if (wiring_.encoder_to_thyroid[s]) parts.push_back(enc.skips[s]);
      x = decoder1_.blocks[k].forward(decoder1_.fuse[k].forward(fuse(parts)), rng);
      out.features[s] = x;
    }
    out.logits = head1_->forward(decoder1_.final_expand->forward(x));
    return out;
  }

  Var<Real> decode_ptmc(const Encoding<Real>& enc, const std::vector<Var<Real>>& thyroid_features,
                        std::mt19937_64* rng = nullptr) const {
    if (!cfg_.dual_decoder) throw std::logic_error("decode_ptmc: model was built without decoder 2");
    check_encoding(enc);
    const int S = cfg_.num_stages();
    if (thyroid_features.size() != std::size_t(S)) {
      throw ShapeError("decode_ptmc: expected " + std::to_string(S) + " decoder-1 features");
    }
    for (int s = 0; s < S; ++s) {
      if (thyroid_features[s].shape() != enc.skips[s].shape()) {
        throw ShapeError("decode_ptmc: decoder-1 feature " + to_string(thyroid_features[s].shape()) +
                         " does not match encoder skip " + to_string(enc.skips[s].shape()));
      }
    }
    Var<Real> x = enc.bottleneck;
    for (int s = S - 1; s >= 0; --s) {
      const std::size_t k = S - 1 - s;
      x = decoder2_.expand[k].forward(x);
      std::vector<Var<Real>> parts{x};
      if (wiring_.into_ptmc[s]) {
        if (cfg_.ptmc_encoder_skip) parts.push_back(enc.skips[s]);
        parts.push_back(thyroid_features[s]);
      }
      x = decoder2_.blocks[k].forward(decoder2_.fuse[k].forward(fuse(parts)), rng);
    }
    return head2_->forward(decoder2_.final_expand->forward(x));
  }

  /// Full forward pass on images [B, img, img, in_channels].
  DualPrediction<Real> forward(const Var<Real>& images, std::mt19937_64* rng = nullptr) const {
    const Encoding<Real> enc = encode(images, rng);
    ThyroidDecoding<Real> thy = decode_thyroid(enc, rng);
    DualPrediction<Real> out;
    if (!cfg_.dual_decoder) {
      out.ptmc_logits = thy.logits;
      return out;
    }
    out.ptmc_logits = decode_ptmc(enc, thy.features, rng);
    out.thyroid_logits = thy.logits;
    out.thyroid_features = std::move(thy.features);
    return out;
  }

  DualPrediction<Real> forward(const Tensor<Real>& images, std::mt19937_64* rng = nullptr) const {
    return forward(Var<Real>::constant(images), rng);
  }

 private:
  struct Decoder {
    // indexed by execution order: element 0 is the deepest stage
    std::vector<PatchExpand<Real>> expand;
    std::vector<Linear<Real>> fuse;
    std::vector<SwinStage<Real>> blocks;
    std::optional<FinalExpand<Real>> final_expand;
  };

  Var<Real> fuse(const std::vector<Var<Real>>& parts) const {
    if (parts.size() == 1) return parts.front();
    return cfg_.skip_fusion_mode == SkipFusion::additive ? nn::add_n(parts) : nn::concat_channels(parts);
  }

  void check_encoding(const Encoding<Real>& enc) const {
    if (enc.skips.size() != std::size_t(cfg_.num_stages()) || !enc.bottleneck.defined()) {
      throw ShapeError("encoding does not match the model's stage count");
    }
  }

  ModelConfig cfg_;
  SkipWiring wiring_;
  ParameterStore<Real> params_;
  std::optional<PatchEmbed<Real>> embed_;
  std::vector<SwinStage<Real>> encoder_;
  std::vector<PatchMerge<Real>> merges_;
  std::optional<SwinStage<Real>> bottleneck_;
  Decoder decoder1_, decoder2_;
  std::optional<Linear<Real>> head1_, head2_;
};

}  // namespace dualswin
