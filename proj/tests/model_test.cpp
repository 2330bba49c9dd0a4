#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "ember/model.hpp"
#include "oracles.hpp"

using namespace ember;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()) || a.dtype() != b.dtype()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  return true;
}

// Random BN affine and running statistics so folding is not trivially exact.
void randomize_bn(NetworkGraph& g, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.5f, 1.5f), v(-0.3f, 0.3f);
  for (const auto& l : g.layers()) {
    if (!std::holds_alternative<BatchNormSpec>(l.op)) continue;
    for (const char* f : {"gamma", "running_var"})
      for (float& x : g.param(param_key(l.name, f)).data()) x = u(rng);
    for (const char* f : {"beta", "running_mean"})
      for (float& x : g.param(param_key(l.name, f)).data()) x = v(rng);
  }
}

Tensor run_bottleneck_by_hand(const NetworkGraph& g, const std::string& p, const Tensor& x, const BottleneckSpec& b, std::size_t in_ch,
                              const ActivationSpec& act, bool residual) {
  auto conv_bn = [&](const std::string& pre, const Tensor& in, Conv2dSpec s) {
    const Tensor y = conv2d_forward(in, s, g.param(pre + ".conv.weight"));
    return batchnorm_forward_eval(y, {s.out_ch}, g.param(pre + ".bn.gamma"), g.param(pre + ".bn.beta"), g.param(pre + ".bn.running_mean"),
                                  g.param(pre + ".bn.running_var"));
  };
  Tensor y = activation_forward(conv_bn(p + ".expand", x, {in_ch, b.expand_ch, 1}), act);
  y = activation_forward(conv_bn(p + ".dw", y, {b.expand_ch, b.expand_ch, 3, b.stride, 1, b.expand_ch}), act);
  y = conv_bn(p + ".project", y, {b.expand_ch, b.out_ch, 1});
  return residual ? add(x, y) : y;
}

}  // namespace

TEST(Model, DefaultBuild) {
  const auto m = build_segmentation_model({});
  EXPECT_EQ(m.graph.layers().size(), 56u);
  for (const char* t : {"stem", "low", "deep"}) EXPECT_NO_THROW(m.graph.tap(t));
  const Tensor y = model_forward(m, Tensor(m.input_shape(1), 0.5f));
  EXPECT_EQ(y.shape(), (Shape{1, 2, 64, 64}));
  EXPECT_THROW(model_forward(m, Tensor({1, 3, 32, 32})), Error);
}

TEST(Model, ConfigValidation) {
  ModelConfig c;
  c.bottlenecks = 16;
  EXPECT_THROW(build_segmentation_model(c), Error);
  c = {};
  c.aspp_rates = {6, 6, 18};
  EXPECT_THROW(build_segmentation_model(c), Error);
  c = {};
  c.activation = ActKind::HardSwish;
  EXPECT_THROW(build_segmentation_model(c), Error);
}

TEST(Model, FullScheduleIsConstructible) {
  ModelConfig c;
  c.bottlenecks = 15;
  c.width_mult = 1.0f;
  c.in_h = c.in_w = 512;
  const auto m = build_segmentation_model(c);
  const auto shapes = m.graph.infer_shapes(m.input_shape(1));
  EXPECT_EQ(shapes.at(m.graph.tap("deep")), (Shape{1, 160, 16, 16}));
  EXPECT_EQ(shapes.at(m.graph.output()), (Shape{1, 2, 512, 512}));
}

TEST(Model, ShapeInferenceIsTotal) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 40; ++t) {
    ModelConfig c;
    c.bottlenecks = 1 + rng() % 15;
    c.width_mult = std::array{0.25f, 0.35f, 0.5f, 0.75f}[rng() % 4];
    c.in_h = 16 + rng() % 100;
    c.in_w = 16 + rng() % 100;
    c.activation = std::array{ActKind::ReLU, ActKind::ELU, ActKind::PReLU}[rng() % 3];
    const auto m = build_segmentation_model(c);
    const auto shapes = m.graph.infer_shapes(m.input_shape(2));
    ASSERT_EQ(shapes.at(m.graph.output()), (Shape{2, 2, c.in_h, c.in_w}));
    if (t < 4) {
      EXPECT_EQ(model_forward(m, Tensor(m.input_shape(1))).shape(), (Shape{1, 2, c.in_h, c.in_w}));
    }
  }
}

TEST(Model, ZeroWeightsGiveZeroLogits) {
  auto m = build_segmentation_model({});
  for (auto& [k, t] : m.graph.params())
    if (k.ends_with(".weight")) t = Tensor(t.shape());
  std::mt19937_64 rng(1);
  const Tensor y = model_forward(m, oracle::random_tensor(m.input_shape(1), rng));
  for (float v : y.data()) ASSERT_EQ(v, 0.0f);
}

TEST(Bottleneck, StrideTwoShape) {
  NetworkGraph g(8);
  const auto out = add_bottleneck(g, "b", kGraphInput, 8, {16, 16, 2}, {ActKind::ReLU}, false);
  init_params(g, 0);
  EXPECT_EQ(g.infer_shapes({1, 8, 16, 16}).at(out), (Shape{1, 16, 8, 8}));
}

TEST(Bottleneck, ResidualNeedsMatchingShape) {
  NetworkGraph g(8);
  try {
    add_bottleneck(g, "b", kGraphInput, 8, {16, 16, 2}, {ActKind::ReLU}, true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::residual_shape_mismatch);
  }
}

TEST(Bottleneck, ZeroProjectionIsIdentity) {
  NetworkGraph g(8);
  add_bottleneck(g, "b", kGraphInput, 8, {32, 8, 1}, {ActKind::ELU}, true);
  init_params(g, 3);
  g.param("b.project.conv.weight") = Tensor(g.param("b.project.conv.weight").shape());
  std::mt19937_64 rng(2);
  const Tensor x = oracle::random_tensor({2, 8, 6, 6}, rng);
  EXPECT_TRUE(bit_equal(forward(g, x), x));
  EXPECT_TRUE(bit_equal(forward_train(g, x).output, x));
}

TEST(Bottleneck, MatchesComposition) {
  std::mt19937_64 rng(4);
  for (ActKind k : {ActKind::ReLU, ActKind::ELU}) {
    for (bool residual : {false, true}) {
      const BottleneckSpec b{24, 8, residual ? 1u : 2u};
      NetworkGraph g(8);
      add_bottleneck(g, "b", kGraphInput, 8, b, {k}, residual);
      init_params(g, 5);
      randomize_bn(g, rng);
      const Tensor x = oracle::random_tensor({1, 8, 7, 7}, rng);
      EXPECT_LE(max_abs_diff(forward(g, x), run_bottleneck_by_hand(g, "b", x, b, 8, {k}, residual)), 1e-6);
    }
  }
}

TEST(Aspp, KeepsSpatialSizeAndMatchesBranches) {
  std::mt19937_64 rng(6);
  NetworkGraph g(4);
  const auto out = add_aspp(g, "aspp", kGraphInput, 4, {1, 2, 3}, 3, 5, 6);
  init_params(g, 7);
  randomize_bn(g, rng);
  const Tensor x = oracle::random_tensor({1, 4, 5, 6}, rng);
  const Tensor y = forward(g, x);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 5, 6}));
  EXPECT_EQ(g.infer_shapes({1, 4, 5, 6}).at(out), y.shape());

  auto cba = [&](const std::string& p, const Tensor& in, Conv2dSpec s) {
    const Tensor c = conv2d_forward(in, s, g.param(p + ".conv.weight"));
    const Tensor b = batchnorm_forward_eval(c, {s.out_ch}, g.param(p + ".bn.gamma"), g.param(p + ".bn.beta"), g.param(p + ".bn.running_mean"),
                                           g.param(p + ".bn.running_var"));
    return activation_forward(b, {ActKind::ReLU});
  };
  std::vector<Tensor> br;
  br.push_back(cba("aspp.b0", x, {4, 3, 1}));
  for (std::size_t i = 0; i < 3; ++i) br.push_back(cba("aspp.b" + std::to_string(i + 1), x, {4, 3, 3, 1, i + 1}));
  const Tensor pooled = activation_forward(conv2d_forward(global_avg_pool(x), {4, 3, 1}, g.param("aspp.pool_conv.weight")), {ActKind::ReLU});
  br.push_back(bilinear_resize(pooled, 5, 6));
  const Tensor cat = concat_channels({&br[0], &br[1], &br[2], &br[3], &br[4]});
  EXPECT_LE(max_abs_diff(y, cba("aspp.fuse", cat, {15, 3, 1})), 1e-6);
}

TEST(Aspp, PoolOfConstantIsConstant) {
  NetworkGraph g(2);
  add_aspp(g, "aspp", kGraphInput, 2, {1, 2, 3}, 2, 4, 4);
  init_params(g, 1);
  std::optional<Tensor> pool_up;
  ExecOptions opt;
  opt.observer = [&](const std::string& n, const Tensor& t) {
    if (n == "aspp.pool_up") pool_up = t;
  };
  forward(g, Tensor({1, 2, 4, 4}, 0.7f), opt);
  ASSERT_TRUE(pool_up);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t j = 1; j < 16; ++j) EXPECT_EQ(pool_up->at(0, c, j / 4, j % 4), pool_up->at(0, c, 0, 0));
}

TEST(Decoder, MissingTap) {
  NetworkGraph g(2);
  add_conv(g, "c", kGraphInput, {2, 2, 1});
  try {
    add_decoder(g, "dec", "c", 2, "low", 2, 2, 8, 8, {1, 2, 8, 8});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::tap_missing);
  }
}

TEST(Freeze, FoldsBatchNormAndKeepsLogits) {
  std::mt19937_64 rng(8);
  for (ActKind k : {ActKind::ReLU, ActKind::ELU, ActKind::PReLU}) {
    ModelConfig c;
    c.activation = k;
    auto m = build_segmentation_model(c);
    randomize_bn(m.graph, rng);
    const auto f = freeze(m);
    EXPECT_EQ(f.graph.layers().size(), 40u);
    for (const auto& l : f.graph.layers()) EXPECT_FALSE(std::holds_alternative<BatchNormSpec>(l.op)) << l.name;
    const Tensor x = oracle::random_tensor(m.input_shape(2), rng);
    const Tensor a = model_forward(m, x), b = model_forward(f, x);
    double scale = 0;
    for (float v : a.data()) scale = std::max(scale, double(std::abs(v)));
    EXPECT_LE(max_abs_diff(a, b), 1e-4 * std::max(1.0, scale));
    EXPECT_LT(f.graph.param_bytes(), m.graph.param_bytes());
  }
}

TEST(ModelIo, RoundTripIsBitExact) {
  std::mt19937_64 rng(9);
  ModelConfig c;
  c.activation = ActKind::PReLU;
  c.seed = 42;
  auto m = build_segmentation_model(c);
  randomize_bn(m.graph, rng);
  std::stringstream ss;
  write_model(ss, m);
  const auto back = read_model(ss);
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.graph.taps(), m.graph.taps());
  ASSERT_EQ(back.graph.params().size(), m.graph.params().size());
  for (const auto& [k, t] : m.graph.params()) EXPECT_TRUE(bit_equal(back.graph.param(k), t)) << k;
  const Tensor x = oracle::random_tensor(m.input_shape(1), rng);
  EXPECT_TRUE(bit_equal(model_forward(m, x), model_forward(back, x)));
}

TEST(ModelIo, RejectsCorruptAndForeignFiles) {
  const auto m = build_segmentation_model({});
  std::stringstream ss;
  write_model(ss, m);
  const std::string bytes = ss.str();

  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  try {
    read_model(truncated);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::corrupt_file);
  }
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::stringstream bm(bad_magic);
  EXPECT_THROW(read_model(bm), Error);
  std::string bad_version = bytes;
  bad_version[4] = char(99);
  std::stringstream bv(bad_version);
  try {
    read_model(bv);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::version_mismatch);
  }
}

TEST(Graph, BackwardMatchesFiniteDifferences) {
  // Every op kind wired through the executor: residual add, concat fan-in,
  // pooling branch, dilated and depthwise convs, BN params. Smooth activations
  // only: BN couples every pixel, so a kink anywhere spoils the differences.
  NetworkGraph g(2);
  add_conv_bn_act(g, "c1", kGraphInput, {2, 4, 3, 1, 1, 1, false}, {ActKind::ELU});
  add_conv_bn_act(g, "dw", "c1.act", {4, 4, 3, 2, 1, 4, false}, {ActKind::ELU});
  g.add_layer({"pool", GlobalAvgPoolSpec{}, {"dw.act"}});
  add_conv(g, "pconv", "pool", {4, 4, 1});
  g.add_layer({"pup", UpsampleSpec{3, 3}, {"pconv"}});
  g.add_layer({"cat", ConcatSpec{}, {"dw.act", "pup"}});
  add_conv(g, "fuse", "cat", {8, 4, 1});
  g.add_layer({"up", UpsampleSpec{6, 6}, {"fuse"}});
  g.add_layer({"res", AddSpec{}, {"up", "c1.act"}});
  add_conv(g, "head", "res", {4, 2, 3, 1, 2, 1, true});
  init_params(g, 3);
  std::mt19937_64 rng(12);
  randomize_bn(g, rng);
  for (const char* b : {"head.bias"})
    for (float& v : g.param(b).data()) v = std::uniform_real_distribution<float>(-0.5f, 0.5f)(rng);

  const Tensor x = oracle::random_tensor({2, 2, 6, 6}, rng);
  const Trace t = forward_train(g, x);
  const Tensor r = oracle::random_tensor(t.output.shape(), rng);
  const Gradients grads = backward(g, t, r);

  auto loss = [&](const NetworkGraph& gg, const Tensor& xx) {
    NetworkGraph copy = gg;
    return oracle::weighted_sum(forward_train(copy, xx).output, r);
  };
  for (const auto& key : g.trainable_params()) {
    const auto num = oracle::numeric_grad(g.param(key), [&](const Tensor& p) {
      NetworkGraph gp = g;
      gp.param(key) = p;
      return loss(gp, x);
    }, 1e-3f);
    EXPECT_LT(oracle::rel_error(num, grads.params.at(key), 1e-2), 1e-3) << key;
  }
  const auto num = oracle::numeric_grad(x, [&](const Tensor& xx) { return loss(g, xx); }, 1e-3f);
  EXPECT_LT(oracle::rel_error(num, grads.input, 1e-2), 1e-3);
}

TEST(Graph, PreluSlopeGradientFlows) {
  NetworkGraph g(3);
  add_activation(g, "act", kGraphInput, {ActKind::PReLU}, 3);
  g.add_layer({"res", AddSpec{}, {"act", kGraphInput}});
  init_params(g, 0);
  std::mt19937_64 rng(13);
  Tensor x = oracle::random_tensor({2, 3, 4, 4}, rng);
  for (float& v : x.data())
    if (std::abs(v) < 0.05f) v += 0.1f;
  const Tensor r = oracle::random_tensor(x.shape(), rng);
  const Gradients grads = backward(g, forward_train(g, x), r);
  const auto num = oracle::numeric_grad(g.param("act.slope"), [&](const Tensor& a) {
    NetworkGraph gp = g;
    gp.param("act.slope") = a;
    return oracle::weighted_sum(forward_train(gp, x).output, r);
  }, 1e-3f);
  EXPECT_LT(oracle::rel_error(num, grads.params.at("act.slope")), 1e-3);
  const auto gx = oracle::numeric_grad(x, [&](const Tensor& xx) { return oracle::weighted_sum(forward_train(g, xx).output, r); }, 1e-3f);
  EXPECT_LT(oracle::rel_error(gx, grads.input), 1e-3);
}
