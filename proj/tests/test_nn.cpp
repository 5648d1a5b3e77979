#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dualswin/nn.hpp"
#include "grad_check.hpp"

namespace dualswin {
namespace {

using testing::gradient_error;
using testing::random_tensor;
using V = Var<double>;

TEST(Linear, IdentityWeightPassesInputThrough) {
  auto x = V::constant(Tensor<double>({1, 2}, {1, 2}));
  auto w = V::constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  auto b = V::constant(Tensor<double>({2}, {0, 0}));
  auto y = nn::linear(x, w, b);
  EXPECT_EQ(y.value().storage(), (std::vector<double>{1, 2}));
}

TEST(Linear, HandComputedValue) {
  auto x = V::constant(Tensor<double>({1, 2}, {1, 1}));
  auto w = V::constant(Tensor<double>({2, 1}, {2, 3}));
  auto b = V::constant(Tensor<double>({1}, {0.5}));
  EXPECT_DOUBLE_EQ(nn::linear(x, w, b).value()[0], 5.5);
}

TEST(Linear, ShapeMismatchNamesBothShapes) {
  auto x = V::constant(Tensor<double>({2, 3}));
  auto w = V::constant(Tensor<double>({2, 4}));
  try {
    nn::linear(x, w);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2,4]"), std::string::npos);
  }
}

TEST(Linear, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  const double err = gradient_error(
      [](const std::vector<V>& in) { return nn::weighted_sum(nn::linear(in[0], in[1], in[2])); },
      {random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({5}, rng)});
  EXPECT_LT(err, 1e-5);
}

TEST(LayerNorm, ConstantVectorNormalizesToZero) {
  auto x = V::constant(Tensor<double>({1, 4}, {3, 3, 3, 3}));
  auto y = nn::layer_norm(x, V::constant(Tensor<double>({4}, 1.0)), V::constant(Tensor<double>({4})));
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoValuesMapToMinusOneAndOne) {
  auto x = V::constant(Tensor<double>({1, 2}, {1, 3}));
  auto y = nn::layer_norm(x, V::constant(Tensor<double>({2}, 1.0)), V::constant(Tensor<double>({2})), 1e-14);
  EXPECT_NEAR(y.value()[0], -1.0, 1e-12);
  EXPECT_NEAR(y.value()[1], 1.0, 1e-12);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  auto weights = random_tensor({3, 6}, rng);
  const double err = gradient_error(
      [&](const std::vector<V>& in) {
        return nn::weighted_sum(nn::layer_norm(in[0], in[1], in[2]), weights);
      },
      {random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)});
  EXPECT_LT(err, 1e-5);
}

TEST(Gelu, ZeroAndReflectionIdentity) {
  // x·Φ(x) − (−x)·Φ(−x) = x·(Φ(x) + Φ(−x)) = x
  EXPECT_EQ(nn::gelu_exact(0.0), 0.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-6, 6);
  for (int i = 0; i < 200; ++i) {
    const double x = u(rng);
    EXPECT_NEAR(nn::gelu_exact(x) - nn::gelu_exact(-x), x, 1e-12);
  }
}

TEST(Gelu, ValueAtOneMatchesErfOracle) {
  // 1·Φ(1) with Φ(1) = 0.841344746068543 (tabulated standard normal CDF).
  EXPECT_NEAR(nn::gelu_exact(1.0), 0.841344746068543, 1e-12);
  auto y = nn::gelu(V::constant(Tensor<double>({1}, {1.0})));
  EXPECT_NEAR(y.value()[0], 0.841345, 1e-6);
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  const double err = gradient_error(
      [](const std::vector<V>& in) {
        return nn::weighted_sum(nn::mlp_gelu(in[0], in[1], in[2], in[3], in[4]));
      },
      {random_tensor({2, 4}, rng), random_tensor({4, 16}, rng), random_tensor({16}, rng),
       random_tensor({16, 4}, rng), random_tensor({4}, rng)});
  EXPECT_LT(err, 1e-5);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(5);
  auto t = random_tensor({7, 13}, rng, 5.0);
  nn::softmax_rows(t.ptr(), 7, 13);
  for (int r = 0; r < 7; ++r) {
    double s = 0;
    for (int c = 0; c < 13; ++c) s += t[r * 13 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(WindowPartition, Shapes) {
  EXPECT_EQ(nn::window_partition(V::constant(Tensor<double>({1, 8, 8, 16})), 4).shape(), (Shape{4, 16, 16}));
  EXPECT_EQ(nn::window_partition(V::constant(Tensor<double>({2, 56, 56, 96})), 7).shape(),
            (Shape{128, 49, 96}));
  EXPECT_THROW(nn::window_partition(V::constant(Tensor<double>({1, 6, 6, 1})), 4), ShapeError);
}

TEST(WindowPartition, ReverseIsExactInverse) {
  std::mt19937_64 rng(6);
  for (auto [h, w, win] : {std::tuple{8, 8, 4}, std::tuple{6, 12, 3}, std::tuple{4, 4, 4}}) {
    auto x = V::constant(random_tensor({2, std::size_t(h), std::size_t(w), 3}, rng));
    auto back = nn::window_reverse(nn::window_partition(x, win), win, 2, h, w);
    EXPECT_EQ(back.value(), x.value());
  }
}

TEST(WindowPartition, TokensAreRowMajorWithinWindows) {
  Tensor<double> t({1, 4, 4, 1});
  for (int i = 0; i < 16; ++i) t[i] = i;
  auto win = nn::window_partition(V::constant(t), 2).value();
  // window 1 is the top-right 2x2 block: values 2,3,6,7
  EXPECT_EQ((std::vector<double>(win.ptr() + 4, win.ptr() + 8)), (std::vector<double>{2, 3, 6, 7}));
}

TEST(CyclicShift, MovesValuesAsExpected) {
  Tensor<double> t({1, 4, 4, 1});
  for (int i = 0; i < 16; ++i) t[i] = i;
  auto x = V::constant(t);
  EXPECT_EQ(nn::cyclic_shift(x, 0).value(), t);
  EXPECT_EQ(nn::cyclic_shift(x, 2).value()[0], 10.0);
}

TEST(CyclicShift, UnshiftIsExactInverse) {
  std::mt19937_64 rng(7);
  auto x = V::constant(random_tensor({2, 6, 6, 2}, rng));
  for (std::size_t s = 0; s < 6; ++s) {
    EXPECT_EQ(nn::cyclic_unshift(nn::cyclic_shift(x, s), s).value(), x.value());
  }
}

TEST(Rearrange, SpaceToDepthOrderAndInverse) {
  Tensor<double> t({1, 2, 2, 1}, {0, 1, 2, 3});  // (0,0)=0 (0,1)=1 (1,0)=2 (1,1)=3
  auto packed = nn::space_to_depth(V::constant(t), 2).value();
  EXPECT_EQ(packed.storage(), (std::vector<double>{0, 2, 1, 3}));
  std::mt19937_64 rng(8);
  auto x = V::constant(random_tensor({2, 8, 4, 3}, rng));
  EXPECT_EQ(nn::depth_to_space(nn::space_to_depth(x, 2), 2).value(), x.value());
  EXPECT_EQ(nn::depth_to_space(nn::space_to_depth(x, 4), 4).value(), x.value());
}

TEST(Rearrange, GradientsOfGatherOps) {
  std::mt19937_64 rng(9);
  auto weights = random_tensor({1, 4, 4, 4}, rng);
  const double err = gradient_error(
      [&](const std::vector<V>& in) {
        auto y = nn::window_reverse(nn::window_partition(nn::cyclic_shift(in[0], 1), 2), 2, 1, 4, 4);
        return nn::weighted_sum(nn::depth_to_space(nn::space_to_depth(y, 2), 2), weights);
      },
      {random_tensor({1, 4, 4, 4}, rng)});
  EXPECT_LT(err, 1e-8);
}

TEST(Concat, JoinsTrailingAxisWithGradient) {
  std::mt19937_64 rng(10);
  auto weights = random_tensor({2, 3, 7}, rng);
  const double err = gradient_error(
      [&](const std::vector<V>& in) { return nn::weighted_sum(nn::concat_channels<double>({in[0], in[1]}), weights); },
      {random_tensor({2, 3, 4}, rng), random_tensor({2, 3, 3}, rng)});
  EXPECT_LT(err, 1e-8);
}

// Region label of each token along one axis of the shifted grid: whether its
// source coordinate wrapped around the border. Independent of the mask code.
std::vector<int> wrap_labels(std::size_t extent, std::size_t shift) {
  std::vector<int> label(extent);
  for (std::size_t i = 0; i < extent; ++i) label[i] = (i + shift >= extent) ? 1 : 0;
  return label;
}

TEST(ShiftMask, ZeroShiftIsAllZero) {
  auto mask = nn::build_shift_mask<double>(8, 8, 4, 0);
  for (double v : mask.data()) EXPECT_EQ(v, 0.0);
}

TEST(ShiftMask, MatchesWrapAroundEnumeration) {
  for (auto [h, w, win, s] : {std::tuple{8, 8, 4, 2}, std::tuple{12, 6, 3, 1}, std::tuple{14, 14, 7, 3}}) {
    auto mask = nn::build_shift_mask<double>(h, w, win, s);
    const auto lh = wrap_labels(h, s), lw = wrap_labels(w, s);
    const std::size_t nw = w / win, n = win * win;
    for (std::size_t widx = 0; widx < mask.dim(0); ++widx) {
      const std::size_t wy = widx / nw, wx = widx % nw;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const auto yi = wy * win + i / win, xi = wx * win + i % win;
          const auto yj = wy * win + j / win, xj = wx * win + j % win;
          const bool same = lh[yi] == lh[yj] && lw[xi] == lw[xj];
          const double m = mask[(widx * n + i) * n + j];
          EXPECT_EQ(m == 0.0, same);
          EXPECT_EQ(m, mask[(widx * n + j) * n + i]);
        }
    }
  }
}

TEST(ShiftMask, CornerWindowHasSixtyFourAllowedPairs) {
  auto mask = nn::build_shift_mask<double>(8, 8, 4, 2);
  const std::size_t n = 16;
  const double* corner = mask.ptr() + 3 * n * n;
  int zeros = 0;
  for (std::size_t i = 0; i < n; ++i) {
    int row = 0;
    for (std::size_t j = 0; j < n; ++j) row += corner[i * n + j] == 0.0;
    EXPECT_EQ(row, 4);
    zeros += row;
  }
  EXPECT_EQ(zeros, 64);
}

TEST(Attention, UniformScoresAverageValues) {
  // q = k = 0 gives equal scores, so every output token is the window mean of v.
  std::mt19937_64 rng(11);
  const std::size_t M = 2, N = 4, C = 4;
  Tensor<double> qkv({M, N, 3 * C});
  auto v = random_tensor({M, N, C}, rng);
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t t = 0; t < N; ++t)
      for (std::size_t c = 0; c < C; ++c) qkv[(m * N + t) * 3 * C + 2 * C + c] = v[(m * N + t) * C + c];
  auto out = nn::attention_core(V::constant(qkv), 2, V{}, {}, Tensor<double>{}).value();
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t c = 0; c < C; ++c) {
      double mean = 0;
      for (std::size_t t = 0; t < N; ++t) mean += v[(m * N + t) * C + c] / N;
      for (std::size_t t = 0; t < N; ++t) EXPECT_NEAR(out[(m * N + t) * C + c], mean, 1e-12);
    }
}

TEST(Attention, MaskedTokenGetsNegligibleWeight) {
  // one head, v one-hot on token 1; masking token 1 must remove its contribution
  const std::size_t N = 2, C = 2;
  Tensor<double> qkv({1, N, 3 * C});
  qkv[2 * C + 0] = 0.0;                  // token 0 value
  qkv[3 * C + 2 * C + 0] = 1.0;          // token 1 value
  Tensor<double> mask({1, N, N});
  mask[1] = nn::kMaskValue;              // token 0 may not attend to token 1
  auto out = nn::attention_core(V::constant(qkv), 1, V{}, {}, mask).value();
  EXPECT_LT(out[0], 1e-30);
}

TEST(Attention, GradientWithBiasAndMask) {
  std::mt19937_64 rng(12);
  const std::size_t win = 2, N = 4, C = 4, heads = 2;
  auto mask = nn::build_shift_mask<double>(4, 4, win, 1);
  auto index = nn::relative_position_index(win);
  auto weights = random_tensor({4, N, C}, rng);
  const double err = gradient_error(
      [&](const std::vector<V>& in) {
        return nn::weighted_sum(nn::attention_core(in[0], heads, in[1], index, mask), weights);
      },
      {random_tensor({4, N, 3 * C}, rng), random_tensor({9, heads}, rng, 0.1)});
  EXPECT_LT(err, 1e-5);
}

TEST(Attention, FullWindowAttentionGradient) {
  std::mt19937_64 rng(13);
  const std::size_t win = 2, N = 4, C = 4, heads = 2;
  auto index = nn::relative_position_index(win);
  auto weights = random_tensor({2, N, C}, rng);
  const double err = gradient_error(
      [&](const std::vector<V>& in) {
        return nn::weighted_sum(
            nn::window_attention(in[0], in[1], in[2], in[3], in[4], heads, in[5], index, Tensor<double>{}),
            weights);
      },
      {random_tensor({2, N, C}, rng), random_tensor({C, 3 * C}, rng, 0.5), random_tensor({3 * C}, rng),
       random_tensor({C, C}, rng, 0.5), random_tensor({C}, rng), random_tensor({9, heads}, rng, 0.1)});
  EXPECT_LT(err, 1e-5);
}

TEST(Attention, RejectsIndivisibleHeads) {
  EXPECT_THROW(nn::attention_core(V::constant(Tensor<double>({1, 4, 15})), 2, V{}, {}, Tensor<double>{}),
               ShapeError);
}

TEST(Primitives, FiniteInputsGiveFiniteOutputs) {
  std::mt19937_64 rng(14);
  auto x = V::constant(random_tensor({1, 4, 4, 4}, rng, 100.0));
  EXPECT_TRUE(nn::gelu(x).value().all_finite());
  EXPECT_TRUE(nn::sigmoid(x).value().all_finite());
  EXPECT_TRUE(nn::layer_norm(x, V::constant(Tensor<double>({4}, 1.0)), V::constant(Tensor<double>({4})))
                  .value()
                  .all_finite());
  Tensor<double> qkv = random_tensor({4, 4, 12}, rng, 100.0);
  auto mask = nn::build_shift_mask<double>(4, 4, 2, 1);
  EXPECT_TRUE(nn::attention_core(V::constant(qkv), 2, V{}, {}, mask).value().all_finite());
}

}  // namespace
}  // namespace dualswin
