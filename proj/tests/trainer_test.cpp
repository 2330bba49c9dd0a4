#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "ember/augment.hpp"
#include "ember/trainer.hpp"
#include "oracles.hpp"

using namespace ember;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  return true;
}

ModelConfig tiny_config(ActKind act = ActKind::ReLU, std::uint64_t seed = 0) {
  ModelConfig c;
  c.in_h = c.in_w = 16;
  c.bottlenecks = 2;
  c.width_mult = 0.25f;
  c.aspp_channels = 32;
  c.decoder_channels = 16;
  c.activation = act;
  c.seed = seed;
  return c;
}

Split tiny_split(std::size_t train_n, std::size_t val_n, std::uint64_t seed = 3) {
  SynthConfig sc;
  sc.count = train_n + val_n;
  sc.size = 16;
  sc.seed = seed;
  auto all = generate_synthetic(sc);
  Split s;
  s.train.assign(all.begin(), all.begin() + std::ptrdiff_t(train_n));
  s.val.assign(all.begin() + std::ptrdiff_t(train_n), all.end());
  return s;
}

TrainConfig quick_train(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 2;
  t.schedule.lr_max = 1e-3f;
  return t;
}

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("ember_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p.string();
}

}  // namespace

// ---------------------------------------------------------------------------
// Lion

TEST(Lion, HandWorkedStep) {
  LionState s;
  s.weight_decay = 0.0f;
  Tensor w({1, 1, 1, 1}, {1.0f}), g({1, 1, 1, 1}, {4.0f}), m({1, 1, 1, 1});
  lion_update(w, g, m, s, 0.1f);
  EXPECT_FLOAT_EQ(w[0], 0.9f);
  EXPECT_NEAR(m[0], 0.04f, 1e-7);  // 1 - 0.99f is not exactly 0.01
}

TEST(Lion, ZeroGradientOnlyDecays) {
  LionState s;
  s.weight_decay = 0.0f;
  Tensor w({1, 1, 1, 3}, {1.0f, -2.0f, 0.5f}), g({1, 1, 1, 3}), m({1, 1, 1, 3});
  const Tensor w0 = w;
  lion_update(w, g, m, s, 0.5f);
  EXPECT_TRUE(bit_equal(w, w0));
  s.weight_decay = 0.1f;
  lion_update(w, g, m, s, 0.5f);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_FLOAT_EQ(w[i], w0[i] * 0.95f);
}

TEST(Lion, StepIsBounded) {
  std::mt19937_64 rng(1);
  LionState s;
  for (int t = 0; t < 50; ++t) {
    const float lr = 1e-3f * float(1 + t % 7);
    Tensor w = oracle::random_tensor({1, 2, 3, 4}, rng, -2.0f, 2.0f);
    const Tensor g = oracle::random_tensor({1, 2, 3, 4}, rng, -5.0f, 5.0f);
    Tensor m = oracle::random_tensor({1, 2, 3, 4}, rng, -1.0f, 1.0f);
    const Tensor w0 = w;
    lion_update(w, g, m, s, lr);
    for (std::size_t i = 0; i < w.numel(); ++i)
      ASSERT_LE(std::abs(w[i] - w0[i]), lr * (1.0f + s.weight_decay * std::abs(w0[i])) + 2 * std::numeric_limits<float>::epsilon() * std::abs(w0[i]));
  }
}

TEST(Lion, StepValidatesBeforeTouchingParams) {
  auto m = build_segmentation_model(tiny_config());
  LionState s;
  std::map<std::string, Tensor> grads;
  for (const auto& k : m.graph.trainable_params()) grads.emplace(k, Tensor(m.graph.param(k).shape(), 1.0f));
  const auto before = m.graph.params();

  auto expect_code = [&](std::map<std::string, Tensor> gr, Errc code) {
    try {
      lion_step(m.graph, gr, s, 0.1f);
      FAIL() << "no throw";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), code);
    }
    for (const auto& [k, t] : before) ASSERT_TRUE(bit_equal(t, m.graph.param(k))) << k;
    EXPECT_EQ(s.steps, 0u);
  };
  const std::string last = grads.rbegin()->first;
  auto missing = grads;
  missing.erase(last);
  expect_code(missing, Errc::missing_params);
  auto wrong = grads;
  wrong[last] = Tensor({1, 1, 1, 1});
  expect_code(wrong, Errc::shape_mismatch);
  auto nan = grads;
  nan[last][0] = std::numeric_limits<float>::quiet_NaN();
  expect_code(nan, Errc::nonfinite_grad);

  lion_step(m.graph, grads, s, 0.1f);
  EXPECT_EQ(s.steps, 1u);
  EXPECT_EQ(s.momentum.size(), grads.size());
}

TEST(Lion, InvalidHyperparameters) {
  LionState s;
  s.beta1 = 1.0f;
  EXPECT_THROW(s.validate(), Error);
  s = {};
  s.weight_decay = -1.0f;
  EXPECT_THROW(s.validate(), Error);
}

TEST(Lion, StateRoundTrip) {
  std::mt19937_64 rng(2);
  LionState s;
  s.steps = 42;
  s.beta2 = 0.98f;
  s.momentum.emplace("a.weight", oracle::random_tensor({2, 3, 1, 1}, rng, -1, 1));
  s.momentum.emplace("b.gamma", oracle::random_tensor({1, 5, 1, 1}, rng, -1, 1));
  std::stringstream ss;
  write_lion(ss, s);
  EXPECT_EQ(read_lion(ss), s);

  std::stringstream bad("EMBX");
  EXPECT_THROW(read_lion(bad), Error);
}

// ---------------------------------------------------------------------------
// Loss scaling

TEST(LossScale, DynamicGrowsAfterInterval) {
  auto s = LossScaler::dynamic(128.0f, 200);
  for (int i = 0; i < 199; ++i) s.update(false);
  EXPECT_EQ(s.scale(), 128.0f);
  s.update(false);
  EXPECT_EQ(s.scale(), 256.0f);
  EXPECT_EQ(s.good_steps(), 0u);
}

TEST(LossScale, OverflowHalvesAndResets) {
  auto s = LossScaler::dynamic(128.0f, 4);
  s.update(false);
  s.update(false);
  s.update(true);
  EXPECT_EQ(s.scale(), 64.0f);
  EXPECT_EQ(s.skipped(), 1u);
  EXPECT_EQ(s.good_steps(), 0u);
  auto f = LossScaler::fixed(128.0f);
  f.update(true);
  for (int i = 0; i < 500; ++i) f.update(false);
  EXPECT_EQ(f.scale(), 128.0f);
  EXPECT_EQ(f.skipped(), 1u);
}

TEST(LossScale, ClampedToRange) {
  auto s = LossScaler::dynamic(LossScaler::kMaxScale, 1);
  s.update(false);
  EXPECT_EQ(s.scale(), LossScaler::kMaxScale);
  auto lo = LossScaler::dynamic(1.0f, 1);
  lo.update(true);
  EXPECT_EQ(lo.scale(), 1.0f);
}

TEST(LossScale, RejectsNonPowerOfTwo) {
  EXPECT_THROW(LossScaler::fixed(100.0f), Error);
  EXPECT_THROW(LossScaler::fixed(0.0f), Error);
  EXPECT_THROW(LossScaler::fixed(2.0f * LossScaler::kMaxScale), Error);
  EXPECT_NO_THROW(LossScaler::fixed(0.5f));
}

TEST(LossScale, JsonRoundTrip) {
  auto s = LossScaler::dynamic(512.0f, 7);
  s.update(false);
  s.update(true);
  s.update(false);
  EXPECT_EQ(LossScaler::from_json(s.to_json()), s);
  EXPECT_THROW(LossScaler::from_json(nlohmann::json{{"mode", "dynamic"}}), Error);
}

TEST(Schedule, WarmupThenCosine) {
  CosineSchedule c;
  c.lr_max = 1.0f;
  c.lr_min = 0.1f;
  c.warmup = 0.1;
  EXPECT_FLOAT_EQ(c.at(0, 100), 0.1f);
  EXPECT_FLOAT_EQ(c.at(9, 100), 1.0f);
  EXPECT_FLOAT_EQ(c.at(10, 100), 1.0f);
  EXPECT_NEAR(c.at(55, 100), 0.55f, 1e-6);
  EXPECT_NEAR(c.at(100, 100), 0.1f, 1e-6);
  for (std::size_t i = 10; i < 99; ++i) ASSERT_GE(c.at(i, 100), c.at(i + 1, 100));
}

// ---------------------------------------------------------------------------
// Loss and mixed precision

TEST(Loss, SaturatedLogitsGiveZeroLoss) {
  const Tensor y({1, 2, 1, 2}, {20.0f, -20.0f, -20.0f, 20.0f});
  const std::vector<std::uint8_t> labels{0, 1};
  const auto r = cross_entropy_loss(y, labels);
  EXPECT_NEAR(r.loss, 0.0, 1e-15);
  EXPECT_TRUE(std::isfinite(r.loss));
  for (float g : r.grad.data()) EXPECT_LT(std::abs(g), 1e-15f);
}

TEST(Amp, StaticScaleGradientsAreBitIdentical) {
  std::mt19937_64 rng(11);
  const ActKind acts[] = {ActKind::ReLU, ActKind::ELU, ActKind::PReLU};
  for (int t = 0; t < 20; ++t) {
    auto cfg = tiny_config(acts[t % 3], 100 + t);
    cfg.bottlenecks = 1 + t % 3;
    auto a = build_segmentation_model(cfg), b = a;
    const Tensor x = oracle::random_tensor(a.input_shape(2), rng, 0.0f, 1.0f);
    std::vector<std::uint8_t> labels(2 * 16 * 16);
    for (auto& v : labels) v = rng() % 2;
    ExecOptions opt;
    opt.amp = true;
    auto s1 = LossScaler::fixed(1.0f), s128 = LossScaler::fixed(128.0f);
    const auto r1 = amp_forward_backward(a.graph, x, labels, s1, opt);
    const auto r128 = amp_forward_backward(b.graph, x, labels, s128, opt);
    ASSERT_FALSE(r1.skipped);
    ASSERT_FALSE(r128.skipped);
    ASSERT_EQ(r1.loss, r128.loss);
    for (const auto& [k, g] : r1.grads.params) ASSERT_TRUE(bit_equal(g, r128.grads.params.at(k))) << "model " << t << " " << k;
  }
}

TEST(Amp, OverflowSkipsAndHalves) {
  auto m = build_segmentation_model(tiny_config());
  Tensor x(m.input_shape(2), 0.5f);
  x[7] = std::numeric_limits<float>::infinity();
  std::vector<std::uint8_t> labels(2 * 16 * 16, 1);
  auto scaler = LossScaler::dynamic(128.0f);
  ExecOptions opt;
  opt.amp = true;
  const auto r = amp_forward_backward(m.graph, x, labels, scaler, opt);
  EXPECT_TRUE(r.skipped);
  EXPECT_EQ(scaler.scale(), 64.0f);
  EXPECT_EQ(scaler.skipped(), 1u);
}

// ---------------------------------------------------------------------------
// Training loop

TEST(Train, StepsAndHistoryLayout) {
  const auto data = tiny_split(4, 2);
  auto cfg = quick_train(2);
  cfg.val_every = 3;
  std::size_t streamed = 0;
  const auto r = train(build_segmentation_model(tiny_config()), data, cfg, [&](const HistoryRow&) { ++streamed; });
  EXPECT_EQ(steps_per_epoch(4, 2), 2u);
  EXPECT_EQ(steps_per_epoch(5, 2), 3u);
  EXPECT_EQ(r.steps, 4u);
  std::size_t train_rows = 0, val_rows = 0;
  for (const auto& h : r.history) (h.split == "train" ? train_rows : val_rows)++;
  EXPECT_EQ(train_rows, 4u);
  // step 2 (epoch end), step 3 (cadence), step 4 (epoch end)
  EXPECT_EQ(val_rows, 3u);
  EXPECT_EQ(streamed, r.history.size());
  EXPECT_EQ(r.lion.steps, 4u);
}

TEST(Train, BestCheckpointHasLowestValidationLoss) {
  const auto data = tiny_split(6, 2);
  auto cfg = quick_train(4);
  cfg.val_every = 1;
  const auto r = train(build_segmentation_model(tiny_config(ActKind::ELU)), data, cfg);
  double lowest = std::numeric_limits<double>::infinity();
  std::size_t at = 0;
  for (const auto& h : r.history)
    if (h.split == "val" && h.loss < lowest) {
      lowest = h.loss;
      at = h.step;
    }
  EXPECT_EQ(r.best_step, at);
  EXPECT_DOUBLE_EQ(r.best_val_loss, lowest);
  const auto again = evaluate(r.best_model.graph, data.val, 2);
  EXPECT_NEAR(again.loss, lowest, 1e-9);
}

TEST(Train, SeededRunsAreIdentical) {
  const auto data = tiny_split(4, 2);
  auto cfg = quick_train(2);
  cfg.seed = 9;
  const auto a = train(build_segmentation_model(tiny_config()), data, cfg);
  const auto b = train(build_segmentation_model(tiny_config()), data, cfg);
  EXPECT_EQ(a.history, b.history);
  for (const auto& [k, t] : a.final_model.graph.params()) ASSERT_TRUE(bit_equal(t, b.final_model.graph.param(k))) << k;
}

TEST(Train, AmpAndQatKeepFloatMasters) {
  const auto data = tiny_split(4, 2);
  auto cfg = quick_train(3);
  cfg.amp = true;
  cfg.qat = true;
  cfg.qat_start_epoch = 1;
  const auto r = train(build_segmentation_model(tiny_config(ActKind::PReLU)), data, cfg);
  for (const auto& [k, t] : r.final_model.graph.params()) {
    EXPECT_EQ(t.dtype(), DType::F32) << k;
    for (float v : t.data()) ASSERT_TRUE(std::isfinite(v)) << k;
  }
  EXPECT_EQ(r.scaler.scale(), 128.0f);
}

TEST(Train, RejectsEmptySplitsAndBadConfig) {
  auto data = tiny_split(2, 1);
  auto model = build_segmentation_model(tiny_config());
  auto bad = quick_train(1);
  bad.batch_size = 0;
  EXPECT_THROW(train(model, data, bad), Error);
  data.val.clear();
  try {
    train(model, data, quick_train(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_split);
  }
}

// ---------------------------------------------------------------------------
// Persistence

TEST(History, CsvRoundTrip) {
  const std::vector<HistoryRow> rows{{1, 0, "train", 0.693147, 0.5, 0.25}, {2, 0, "val", 0.125, 0.875, 0.8125}};
  EXPECT_EQ(parse_history_csv(history_csv(rows)), rows);
  EXPECT_THROW(parse_history_csv("nope\n"), Error);
  EXPECT_THROW(parse_history_csv("step,epoch,split,loss,mpa,miou\n1,0,train,x,1,1\n"), Error);
}

TEST(Checkpoint, RoundTrip) {
  const auto dir = temp_dir("ckpt");
  Checkpoint c{build_segmentation_model(tiny_config(ActKind::PReLU, 4)), {}, LossScaler::dynamic(256.0f, 10)};
  c.lion.steps = 3;
  c.lion.momentum.emplace("x", Tensor({1, 2, 1, 1}, {0.5f, -0.25f}));
  c.scaler.update(true);
  const auto files = save_checkpoint(dir, c);
  EXPECT_EQ(files.size(), 3u);
  for (const auto& f : files) EXPECT_TRUE(std::filesystem::exists(f)) << f;
  const auto back = load_checkpoint(dir);
  EXPECT_EQ(back.model.config, c.model.config);
  for (const auto& [k, t] : c.model.graph.params()) ASSERT_TRUE(bit_equal(t, back.model.graph.param(k))) << k;
  EXPECT_EQ(back.lion, c.lion);
  EXPECT_EQ(back.scaler, c.scaler);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Augmentation

TEST(Augment, ZeroProbabilityIsIdentity) {
  const auto s = tiny_split(1, 0).train[0];
  std::mt19937_64 rng(1);
  AugmentConfig off;
  off.flip_prob = 0.0f;
  off.warp_prob = 0.0f;
  for (int i = 0; i < 5; ++i) EXPECT_EQ(augment(s, rng, off), s);
}

TEST(Augment, FlipIsInvolution) {
  const auto s = tiny_split(1, 0).train[0];
  const auto f = flip_horizontal(s);
  EXPECT_FALSE(f == s);
  EXPECT_EQ(flip_horizontal(f), s);
  EXPECT_EQ(f.mask[0], s.mask[s.width() - 1]);
}

TEST(Augment, HomographyMapsCorners) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> j(-3.0, 3.0);
  for (int t = 0; t < 20; ++t) {
    std::array<std::pair<double, double>, 4> from{{{0, 0}, {32, 0}, {32, 32}, {0, 32}}}, to = from;
    for (auto& [x, y] : to) {
      x += j(rng);
      y += j(rng);
    }
    const auto h = homography_from_corners(from, to);
    for (int i = 0; i < 4; ++i) {
      const auto [x, y] = apply_homography(h, from[i].first, from[i].second);
      ASSERT_NEAR(x, to[i].first, 1e-9);
      ASSERT_NEAR(y, to[i].second, 1e-9);
    }
  }
}

TEST(Augment, MasksStayBinaryAndImagesInRange) {
  auto samples = tiny_split(8, 0).train;
  AugmentConfig always;
  always.flip_prob = 1.0f;
  always.warp_prob = 1.0f;
  append_augmented_copies(samples, 7, always);
  ASSERT_EQ(samples.size(), 16u);
  for (std::size_t i = 8; i < 16; ++i) {
    EXPECT_EQ(samples[i].id, samples[i - 8].id + "_aug");
    EXPECT_EQ(samples[i].image.shape(), samples[i - 8].image.shape());
    for (auto v : samples[i].mask) ASSERT_LE(v, 1);
    for (float v : samples[i].image.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}
