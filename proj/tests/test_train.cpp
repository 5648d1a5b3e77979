#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "dualswin/train.hpp"
#include "grad_check.hpp"

namespace dualswin {
namespace {

namespace fs = std::filesystem;

Config small_config() {
  Config c;
  c.model.img_size = 16;
  c.model.patch_size = 4;
  c.model.embed_dim = 8;
  c.model.encoder_depths = {2};
  c.model.decoder_depths = {2};
  c.model.num_heads = {2, 2};
  c.model.window_size = 2;
  c.model.mlp_ratio = 2.0;
  c.model.skip_connection_count = 2;
  c.train.batch_size = 4;
  c.train.epochs = 4;
  c.train.warmup_epochs = 1;
  c.train.base_lr = 1e-3;
  return c;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

TEST(Schedule, WarmupAndStepDecay) {
  TrainConfig t;
  t.base_lr = 1.0;
  EXPECT_DOUBLE_EQ(lr_at(0, t), 1.0 / 20);
  EXPECT_DOUBLE_EQ(lr_at(20, t), 1.0);
  EXPECT_NEAR(lr_at(80, t), 0.01, 1e-15);
  EXPECT_DOUBLE_EQ(lr_at(49, t), 1.0);
  EXPECT_NEAR(lr_at(50, t), 0.1, 1e-15);
  // both branches give base at the boundary
  EXPECT_DOUBLE_EQ(t.base_lr / 20 + (t.base_lr - t.base_lr / 20) * 20 / 20, lr_at(20, t));
  for (int e = 1; e < 20; ++e) EXPECT_GT(lr_at(e, t), lr_at(e - 1, t));
}

TEST(AdamW, HandStep) {
  for (double wd : {0.0, 0.05}) {
    ParameterStore<double> s;
    s.add("theta", Tensor<double>({1}, 1.0));
    s[0].grad[0] = 1.0;
    AdamW<double> opt(s, 0.9, 0.999, 1e-8, wd);
    opt.step(s, 0.1);
    EXPECT_NEAR(s[0].value[0], 0.9 - 0.1 * wd, 1e-7);
  }
}

TEST(AdamW, ZeroGradientIsFixedPoint) {
  ParameterStore<double> s;
  s.add("w", Tensor<double>({3}, {1, -2, 3}));
  AdamW<double> opt(s, 0.9, 0.999, 1e-8, 0.0);
  for (int i = 0; i < 5; ++i) opt.step(s, 0.1);
  EXPECT_EQ(s[0].value, Tensor<double>({3}, {1, -2, 3}));
}

TEST(AdamW, NanGradientNamesParameter) {
  ParameterStore<double> s;
  s.add("encoder0.block0.mlp.fc1.weight", Tensor<double>({2}));
  s[0].grad[1] = std::nan("");
  AdamW<double> opt(s, 0.9, 0.999, 1e-8, 0.0);
  try {
    opt.step(s, 0.1);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder0.block0.mlp.fc1.weight"), std::string::npos);
  }
}

TEST(Clip, ScalesOnlyAboveThreshold) {
  ParameterStore<double> s;
  s.add("a", Tensor<double>({2}));
  s.add("b", Tensor<double>({1}));
  s[0].grad = Tensor<double>({2}, {6, 0});
  s[1].grad = Tensor<double>({1}, {-8});
  EXPECT_DOUBLE_EQ(clip_gradients(s, 5.0), 10.0);
  EXPECT_DOUBLE_EQ(s[0].grad[0], 3.0);
  EXPECT_DOUBLE_EQ(s[1].grad[0], -4.0);
  s[0].grad = Tensor<double>({2}, {3, 0});
  s[1].grad = Tensor<double>({1}, {0});
  clip_gradients(s, 5.0);
  EXPECT_EQ(s[0].grad[0], 3.0);
}

TEST(Clip, RandomNormsNeverGrowOrFlipSigns) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    ParameterStore<double> s;
    s.add("a", Tensor<double>({7}));
    s[0].grad = testing::random_tensor({7}, rng, trial % 5 + 0.1);
    const Tensor<double> before = s[0].grad;
    const double max = 0.5 + trial % 3;
    const double pre = clip_gradients(s, max);
    EXPECT_NEAR(global_grad_norm(s), std::min(pre, max), 1e-9);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_GE(before[i] * s[0].grad[i], 0.0);
  }
}

TEST(TrainStep, ZeroLearningRateIsFixedPoint) {
  Config c = small_config();
  Trainer<double> t(c);
  const auto samples = synth_generate(2, 16, 0);
  const auto batch = make_batch<double>({&samples[0], &samples[1]});
  std::vector<Tensor<double>> before;
  for (const auto& p : t.model().parameters()) before.push_back(p->value);
  const double l0 = t.train_step(batch, 0.0);
  EXPECT_LE(l0, 1 + std::log(2.0));
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_EQ(t.model().parameters()[k].value, before[k]);
}

TEST(TrainStep, FixedBatchLossHalvesWithinFiftySteps) {
  const Config c = load_config(fs::path(DUALSWIN_SOURCE_DIR) / "configs" / "tiny.cfg");
  Trainer<float> t(c);
  const auto samples = synth_generate(static_cast<std::size_t>(c.train.batch_size),
                                      static_cast<std::size_t>(c.model.img_size), 1);
  std::vector<const Sample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  const auto batch = make_batch<float>(ptrs, static_cast<std::size_t>(c.model.in_channels));
  // a single memorised batch tolerates a far larger step than the epoch
  // schedule; at base_lr the tumor head is still on its plateau after 50 steps
  const double lr = 2e-2;
  const double first = t.train_step(batch, lr);
  double last = first;
  for (int i = 0; i < 50; ++i) last = t.train_step(batch, lr);
  EXPECT_LT(last, 0.5 * first);
}

TEST(Fit, HistoryCheckpointsAndDeterminism) {
  const Config c = small_config();
  const auto samples = synth_generate(10, 16, 2);
  const auto split = split_indices(samples.size(), c.data.split_fractions, c.train.seed);
  const fs::path a = fs::path(::testing::TempDir()) / "fit_a", b = fs::path(::testing::TempDir()) / "fit_b";
  fs::remove_all(a);
  fs::remove_all(b);
  Trainer<float> ta(c), tb(c);
  const auto ra = ta.fit(samples, split, {a});
  tb.fit(samples, split, {b});
  EXPECT_EQ(ra.history.size(), 4u);
  const std::string ha = read_file(a / "history.csv");
  EXPECT_EQ(std::count(ha.begin(), ha.end(), '\n'), 5);
  EXPECT_EQ(ha.substr(0, ha.find('\n')), kHistoryHeader);
  EXPECT_EQ(ha, read_file(b / "history.csv"));
  EXPECT_EQ(read_file(a / "checkpoint_last.bin"), read_file(b / "checkpoint_last.bin"));
  EXPECT_TRUE(fs::exists(a / "checkpoint_best.bin"));
  const Checkpoint best = load_checkpoint(a / "checkpoint_best.bin");
  EXPECT_EQ(std::stoi(best.meta_or("best_epoch", "")), ra.best_epoch);
  // best-Dice never decreases across the history
  double running = -1;
  for (const auto& r : ra.history) running = std::max(running, r.val_dice_ptmc);
  EXPECT_DOUBLE_EQ(running, ra.best_val_dice_ptmc);
}

TEST(Fit, ResumeReproducesUninterruptedRun) {
  const Config c = small_config();
  const auto samples = synth_generate(10, 16, 3);
  const auto split = split_indices(samples.size(), c.data.split_fractions, 0);
  const fs::path full = fs::path(::testing::TempDir()) / "fit_full", part = fs::path(::testing::TempDir()) / "fit_part";
  fs::remove_all(full);
  fs::remove_all(part);
  Trainer<float>(c).fit(samples, split, {full});
  FitOptions first{part};
  first.stop_after_epochs = 2;
  Trainer<float>(c).fit(samples, split, first);
  FitOptions second{part};
  second.resume = true;
  Trainer<float>(c).fit(samples, split, second);
  EXPECT_EQ(read_file(full / "checkpoint_last.bin"), read_file(part / "checkpoint_last.bin"));
  EXPECT_EQ(read_file(full / "history.csv"), read_file(part / "history.csv"));
}

TEST(Fit, ResumeRejectsDifferentConfig) {
  Config c = small_config();
  const auto samples = synth_generate(10, 16, 3);
  const auto split = split_indices(samples.size(), c.data.split_fractions, 0);
  const fs::path dir = fs::path(::testing::TempDir()) / "fit_mismatch";
  fs::remove_all(dir);
  FitOptions o{dir};
  o.stop_after_epochs = 1;
  Trainer<float>(c).fit(samples, split, o);
  c.train.alpha = 0.25;
  o.resume = true;
  EXPECT_THROW(Trainer<float>(c).fit(samples, split, o), CheckpointError);
}

TEST(Fit, ModelFromCheckpointMatchesTrainedWeights) {
  const Config c = small_config();
  const auto samples = synth_generate(10, 16, 4);
  const auto split = split_indices(samples.size(), c.data.split_fractions, 0);
  const fs::path dir = fs::path(::testing::TempDir()) / "fit_reload";
  fs::remove_all(dir);
  Trainer<float> t(c);
  t.fit(samples, split, {dir});
  Config loaded_cfg;
  const auto model = model_from_checkpoint<float>(load_checkpoint(dir / "checkpoint_last.bin"), &loaded_cfg);
  EXPECT_EQ(loaded_cfg, c);
  for (std::size_t k = 0; k < model.parameters().size(); ++k) {
    EXPECT_EQ(model.parameters()[k].value, t.model().parameters()[k].value);
  }
}

TEST(Evaluate, GroundTruthAsPredictionScoresOne) {
  const auto samples = synth_generate(5, 16, 5);
  std::vector<const Sample*> ptrs;
  std::vector<SamplePrediction> preds;
  for (const auto& s : samples) {
    ptrs.push_back(&s);
    SamplePrediction p;
    p.thyroid = Grid<float>(16, 16);
    p.ptmc = Grid<float>(16, 16);
    for (std::size_t i = 0; i < 256; ++i) {
      p.thyroid.data[i] = s.thyroid.data[i];
      p.ptmc.data[i] = s.ptmc.data[i];
    }
    preds.push_back(p);
  }
  const Evaluation ev = evaluate_predictions(ptrs, preds, 0.5);
  for (const auto* r : {&ev.thyroid->report, &ev.ptmc.report}) {
    EXPECT_EQ(r->jaccard, 1.0);
    EXPECT_EQ(r->dice, 1.0);
    EXPECT_EQ(r->f1, 1.0);
    EXPECT_EQ(r->tp, 1.0);
    EXPECT_EQ(r->auc, 1.0);
  }
  EXPECT_THROW(evaluate_predictions({}, {}, 0.5), DataError);
}

}  // namespace
}  // namespace dualswin
