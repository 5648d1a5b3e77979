#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dualswin/losses.hpp"
#include "dualswin/metrics.hpp"
#include "grad_check.hpp"

namespace dualswin {
namespace {

using T = Tensor<double>;

TEST(Bce, PerfectPredictionIsNearZero) {
  const T y({4}, {1, 0, 1, 0});
  EXPECT_LE(bce(y, y).value, 1e-6);
}

TEST(Bce, HalfProbabilityGivesLn2) {
  const T y({3}, {1, 0, 1});
  EXPECT_NEAR(bce(y, T({3}, 0.5)).value, 0.693147, 1e-6);
}

TEST(Bce, HandValue) {
  // −(ln 0.9 + ln 0.8)/2
  EXPECT_NEAR(bce(T({2}, {1, 0}), T({2}, {0.9, 0.2})).value, 0.164252, 1e-6);
}

TEST(DiceLoss, HandValues) {
  const T y({4}, {1, 1, 0, 0});
  EXPECT_NEAR(dice_loss(y, y).value, 0.0, 1e-6);
  EXPECT_NEAR(dice_loss(y, T({4}, {0, 0, 1, 1})).value, 1.0, 1e-6);
  EXPECT_NEAR(dice_loss(y, T({4}, {1, 0, 1, 0})).value, 0.5, 1e-6);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  T y({20}), p({20});
  for (std::size_t i = 0; i < 20; ++i) {
    y[i] = rng() % 2;
    p[i] = u(rng);
  }
  for (int which = 0; which < 2; ++which) {
    const auto loss = [&](const T& q) { return which ? dice_loss(y, q).value : bce(y, q).value; };
    const T analytic = which ? dice_loss(y, p).grad : bce(y, p).grad;
    double diff2 = 0, norm2 = 0;
    for (std::size_t i = 0; i < 20; ++i) {
      T up = p, down = p;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      const double numeric = (loss(up) - loss(down)) / 2e-6;
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
      norm2 += numeric * numeric;
    }
    EXPECT_LT(std::sqrt(diff2 / norm2), 1e-6) << (which ? "dice" : "bce");
  }
}

TEST(Losses, RangesHoldOnRandomInputs) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    T y({16}), p({16});
    for (std::size_t i = 0; i < 16; ++i) {
      y[i] = rng() % 2;
      p[i] = u(rng);
    }
    EXPECT_GE(bce(y, p).value, 0.0);
    const double d = dice_loss(y, p).value;
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
    EXPECT_GE(combined_loss_value(p, y, p, y, {u(rng), u(rng)}), 0.0);
  }
}

TEST(CombinedLoss, PerfectPredictionsGiveZero) {
  const T y1({4}, {1, 1, 0, 0}), y2({4}, {0, 1, 0, 0});
  for (double a : {0.0, 0.3, 1.0})
    for (double b : {0.0, 0.7, 1.0}) EXPECT_NEAR(combined_loss_value(y1, y1, y2, y2, {a, b}), 0.0, 1e-6);
}

TEST(CombinedLoss, AllBceWeightCollapses) {
  const T y1({4}, {1, 1, 0, 0}), p1({4}, {0.7, 0.6, 0.2, 0.1});
  const T y2({4}, {0, 1, 0, 0}), p2({4}, {0.3, 0.8, 0.4, 0.1});
  EXPECT_DOUBLE_EQ(combined_loss_value(p1, y1, p2, y2, {1.0, 1.0}), 0.5 * (bce(y1, p1).value + bce(y2, p2).value));
}

TEST(CombinedLoss, ComposedHandValue) {
  // decoder 2: BCE part on ([1,0],[0.9,0.2]) = 0.164252, Dice part on the
  // [1,1,0,0]/[1,0,1,0] pair = 0.5 → ½(0.5·0.164252 + 0.5·0.5) = 0.166063
  const double bce2 = bce(T({2}, {1, 0}), T({2}, {0.9, 0.2})).value;
  const double dl2 = dice_loss(T({4}, {1, 1, 0, 0}), T({4}, {1, 0, 1, 0})).value;
  const T y1({4}, {1, 0, 0, 1});
  const double perfect = combined_loss_value(y1, y1, y1, y1, {0.5, 0.5});
  EXPECT_NEAR(0.5 * (0.5 * bce2 + 0.5 * dl2) + perfect, 0.166063, 1e-6);
}

TEST(CombinedLoss, SymmetricUnderDecoderSwap) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 50; ++trial) {
    T y1({9}), y2({9}), p1({9}), p2({9});
    for (std::size_t i = 0; i < 9; ++i) {
      y1[i] = rng() % 2;
      y2[i] = rng() % 2;
      p1[i] = u(rng);
      p2[i] = u(rng);
    }
    const double a = u(rng), b = u(rng);
    EXPECT_NEAR(combined_loss_value(p1, y1, p2, y2, {a, b}), combined_loss_value(p2, y2, p1, y1, {b, a}), 1e-12);
  }
}

TEST(CombinedLoss, GraphOpGradientOnLogits) {
  std::mt19937_64 rng(6);
  T y1({1, 2, 2, 1}, {1, 0, 1, 1}), y2({1, 2, 2, 1}, {0, 0, 1, 0});
  const double err = testing::gradient_error(
      [&](const std::vector<Var<double>>& in) {
        DualPrediction<double> pred;
        pred.thyroid_logits = in[0];
        pred.ptmc_logits = in[1];
        return combined_loss(pred, y1, y2, {0.3, 0.6});
      },
      {testing::random_tensor({1, 2, 2, 1}, rng), testing::random_tensor({1, 2, 2, 1}, rng)}, 1e-5);
  EXPECT_LT(err, 1e-6);
}

std::vector<std::uint8_t> random_mask(std::mt19937_64& rng, std::size_t n, double density) {
  std::bernoulli_distribution coin(density);
  std::vector<std::uint8_t> m(n);
  for (auto& v : m) v = coin(rng);
  return m;
}

TEST(Metrics, SetCountingCases) {
  const std::vector<std::uint8_t> a{1, 1, 0, 0, 1, 0};
  EXPECT_EQ(jaccard(a, a), 1.0);
  EXPECT_EQ(dice_coeff(a, a), 1.0);
  const std::vector<std::uint8_t> b{0, 0, 1, 1, 0, 0};
  EXPECT_EQ(jaccard(a, b), 0.0);
  // |A∩B| = 2, |A∪B| = 6, |A| + |B| = 8
  const std::vector<std::uint8_t> c{1, 1, 1, 1, 0, 0, 0, 0};
  const std::vector<std::uint8_t> d{1, 1, 0, 0, 1, 1, 0, 0};
  EXPECT_DOUBLE_EQ(jaccard(c, d), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(dice_coeff(c, d), 0.5);
  const std::vector<std::uint8_t> empty(5, 0);
  EXPECT_EQ(dice_coeff(empty, empty), 1.0);
  EXPECT_EQ(jaccard(empty, empty), 1.0);
}

TEST(Metrics, ConfusionHandCase) {
  const auto r = confusion(std::vector<std::uint8_t>{1, 1, 0, 0}, std::vector<std::uint8_t>{1, 0, 1, 0});
  EXPECT_EQ(r.counts, (ConfusionCounts{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(r.f1, 0.5);
  const auto perfect = confusion(std::vector<std::uint8_t>{1, 0, 1}, std::vector<std::uint8_t>{1, 0, 1});
  EXPECT_EQ(perfect.fp, 0.0);
  EXPECT_EQ(perfect.fn, 0.0);
  EXPECT_EQ(perfect.f1, 1.0);
}

TEST(Metrics, DiceJaccardIdentityAndF1OnRandomMasks) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = random_mask(rng, 64, 0.3), b = random_mask(rng, 64, 0.3);
    const auto c = confusion_counts(a, b);
    // exact rational check: dice = 2J/(1+J)  ⇔  2tp·(tp+fp+fn+tp) = 2tp·(2tp+fp+fn)
    const auto uni = c.tp + c.fp + c.fn;
    EXPECT_EQ(2 * c.tp * (uni + c.tp), 2 * c.tp * (2 * c.tp + c.fp + c.fn));
    const double j = jaccard(c);
    EXPECT_NEAR(dice_coeff(c), 2 * j / (1 + j), 1e-15);
    EXPECT_EQ(confusion(a, b).f1, dice_coeff(a, b));
  }
}

// Mann–Whitney oracle: P(score_pos > score_neg) + ½ P(tie).
double rank_statistic(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (l[i] && !l[j]) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

TEST(Roc, HandCases) {
  const std::vector<std::uint8_t> labels{0, 0, 1, 1};
  EXPECT_EQ(roc_auc<double>(std::vector<double>{0.1, 0.2, 0.8, 0.9}, labels).auc, 1.0);
  EXPECT_EQ(roc_auc<double>(std::vector<double>{0.5, 0.5, 0.5, 0.5}, labels).auc, 0.5);
  EXPECT_DOUBLE_EQ(roc_auc<double>(std::vector<double>{0.1, 0.4, 0.35, 0.8}, labels).auc, 0.75);
  EXPECT_THROW(roc_auc<double>(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{1, 1}), std::domain_error);
}

TEST(Roc, MatchesRankStatisticOnRandomSets) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 4 + rng() % 20;
    std::vector<double> s(n);
    std::vector<std::uint8_t> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 8) / 8.0;  // coarse grid forces ties
      l[i] = rng() % 2;
    }
    l[0] = 1;
    l[1] = 0;
    EXPECT_EQ(roc_auc<double>(s, l).auc, rank_statistic(s, l));
  }
}

TEST(Roc, CurveEndpoints) {
  const auto curve = roc_auc<double>(std::vector<double>{0.3, 0.6, 0.6, 0.9}, std::vector<std::uint8_t>{0, 1, 0, 1});
  EXPECT_EQ(curve.points.front().fpr, 0.0);
  EXPECT_EQ(curve.points.back().fpr, 1.0);
  EXPECT_EQ(curve.points.back().tpr, 1.0);
  EXPECT_EQ(curve.points.size(), 4u);  // ∞ plus three distinct scores
}

TEST(Metrics, AccumulatorPerfectInput) {
  MetricsAccumulator acc("ptmc");
  const std::vector<std::uint8_t> m{0, 1, 1, 0};
  const std::vector<float> p{0, 1, 1, 0};
  acc.add(m, m, p);
  acc.add(m, m, p);
  const auto r = acc.report();
  EXPECT_EQ(r.jaccard, 1.0);
  EXPECT_EQ(r.dice, 1.0);
  EXPECT_EQ(r.f1, 1.0);
  EXPECT_EQ(r.auc, 1.0);
  EXPECT_EQ(r.images, 2u);
  MetricsAccumulator empty("none");
  EXPECT_THROW(empty.report(), std::logic_error);
}

}  // namespace
}  // namespace dualswin
