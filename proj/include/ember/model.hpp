#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ember/error.hpp"
#include "ember/executor.hpp"
#include "ember/graph.hpp"
#include "ember/tensor_io.hpp"

namespace ember {

/// One inverted-residual block: expand 1x1 -> depthwise 3x3 -> project 1x1.
struct BottleneckSpec {
  std::size_t expand_ch = 16;
  std::size_t out_ch = 16;
  std::size_t stride = 1;
};

/// Expansion/output/stride schedule of the 15-block MobileNetV3-Large
/// backbone. Depthwise kernels are 3x3 throughout here.
inline constexpr std::array<std::array<std::size_t, 3>, 15> kBottleneckSchedule{{
    {16, 16, 1}, {64, 24, 2}, {72, 24, 1}, {72, 40, 2}, {120, 40, 1},
    {120, 40, 1}, {240, 80, 2}, {200, 80, 1}, {184, 80, 1}, {184, 80, 1},
    {480, 112, 1}, {672, 112, 1}, {672, 160, 2}, {960, 160, 1}, {960, 160, 1},
}};

/// Rounds to a multiple of `divisor` without dropping more than 10%.
inline std::size_t make_divisible(double v, std::size_t divisor = 8) {
  auto r = std::max<std::size_t>(divisor, static_cast<std::size_t>(v + divisor / 2.0) / divisor * divisor);
  if (double(r) < 0.9 * v) r += divisor;
  return r;
}

struct ModelConfig {
  std::size_t in_h = 64;
  std::size_t in_w = 64;
  std::size_t in_ch = 3;
  std::size_t stem_filters = 16;
  std::size_t bottlenecks = 3;
  float width_mult = 0.25f;
  std::array<std::size_t, 3> aspp_rates{6, 12, 18};
  std::size_t aspp_channels = 256;  // before width scaling
  std::size_t decoder_channels = 48;  // shallow-tap projection, before width scaling
  std::size_t classes = 2;
  ActKind activation = ActKind::ReLU;
  float elu_alpha = 1.0f;
  std::uint64_t seed = 0;

  void validate() const {
    if (bottlenecks < 1 || bottlenecks > kBottleneckSchedule.size())
      throw Error(Errc::invalid_config, "bottleneck count must be in [1, 15]");
    if (!(aspp_rates[0] < aspp_rates[1] && aspp_rates[1] < aspp_rates[2]) || aspp_rates[0] < 1)
      throw Error(Errc::invalid_config, "ASPP dilation rates must be positive and strictly increasing");
    if (classes != 2) throw Error(Errc::invalid_config, "the segmentation head has exactly 2 classes");
    if (!(width_mult > 0.0f)) throw Error(Errc::invalid_config, "width multiplier must be positive");
    if (in_h < 16 || in_w < 16 || in_ch == 0 || stem_filters == 0) throw Error(Errc::invalid_config, "input must be at least 16x16");
    if (activation == ActKind::HardSwish) throw Error(Errc::invalid_config, "bottleneck activation must be relu, elu or prelu");
  }

  std::size_t scaled(std::size_t base) const { return make_divisible(base * double(width_mult)); }

  std::vector<BottleneckSpec> schedule() const {
    std::vector<BottleneckSpec> out;
    for (std::size_t i = 0; i < bottlenecks; ++i) {
      const auto& row = kBottleneckSchedule[i];
      out.push_back({scaled(row[0]), scaled(row[1]), row[2]});
    }
    return out;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// ---------------------------------------------------------------------------
// Block builders. Each returns the name of its output layer.

inline std::string add_conv(NetworkGraph& g, const std::string& name, const std::string& input, Conv2dSpec spec) {
  g.add_layer({name, spec, {input}});
  return name;
}

inline std::string add_conv_bn(NetworkGraph& g, const std::string& prefix, const std::string& input, Conv2dSpec spec) {
  add_conv(g, prefix + ".conv", input, spec);
  g.add_layer({prefix + ".bn", BatchNormSpec{spec.out_ch}, {prefix + ".conv"}});
  return prefix + ".bn";
}

inline std::string add_activation(NetworkGraph& g, const std::string& name, const std::string& input, ActivationSpec act, std::size_t channels) {
  act.channels = act.kind == ActKind::PReLU ? channels : 0;
  g.add_layer({name, act, {input}});
  return name;
}

inline std::string add_conv_bn_act(NetworkGraph& g, const std::string& prefix, const std::string& input, Conv2dSpec spec, ActivationSpec act) {
  const std::string bn = add_conv_bn(g, prefix, input, spec);
  return add_activation(g, prefix + ".act", bn, act, spec.out_ch);
}

/// The residual add is present only for stride 1 with matching channels.
inline std::string add_bottleneck(NetworkGraph& g, const std::string& prefix, const std::string& input, std::size_t in_ch,
                                  const BottleneckSpec& b, ActivationSpec act, bool use_residual) {
  if (use_residual && (b.stride != 1 || in_ch != b.out_ch))
    throw Error(Errc::residual_shape_mismatch, prefix + ": residual needs stride 1 and in_ch == out_ch");
  std::string x = add_conv_bn_act(g, prefix + ".expand", input, {in_ch, b.expand_ch, 1, 1, 1, 1, false}, act);
  x = add_conv_bn_act(g, prefix + ".dw", x, {b.expand_ch, b.expand_ch, 3, b.stride, 1, b.expand_ch, false}, act);
  x = add_conv_bn(g, prefix + ".project", x, {b.expand_ch, b.out_ch, 1, 1, 1, 1, false});
  if (!use_residual) return x;
  g.add_layer({prefix + ".residual", AddSpec{}, {input, x}});
  return prefix + ".residual";
}

/// Five parallel branches on a (h, w) feature map, concatenated and fused by
/// a 1x1 conv: 1x1, three dilated 3x3, and image pooling.
inline std::string add_aspp(NetworkGraph& g, const std::string& prefix, const std::string& input, std::size_t in_ch,
                            const std::array<std::size_t, 3>& rates, std::size_t out_ch, std::size_t h, std::size_t w) {
  const ActivationSpec relu{ActKind::ReLU};
  std::vector<std::string> branches;
  branches.push_back(add_conv_bn_act(g, prefix + ".b0", input, {in_ch, out_ch, 1, 1, 1, 1, false}, relu));
  for (std::size_t i = 0; i < 3; ++i)
    branches.push_back(add_conv_bn_act(g, prefix + ".b" + std::to_string(i + 1), input, {in_ch, out_ch, 3, 1, rates[i], 1, false}, relu));
  g.add_layer({prefix + ".pool", GlobalAvgPoolSpec{}, {input}});
  add_conv(g, prefix + ".pool_conv", prefix + ".pool", {in_ch, out_ch, 1, 1, 1, 1, false});
  add_activation(g, prefix + ".pool_act", prefix + ".pool_conv", relu, out_ch);
  g.add_layer({prefix + ".pool_up", UpsampleSpec{h, w}, {prefix + ".pool_act"}});
  branches.push_back(prefix + ".pool_up");
  g.add_layer({prefix + ".concat", ConcatSpec{}, branches});
  return add_conv_bn_act(g, prefix + ".fuse", prefix + ".concat", {5 * out_ch, out_ch, 1, 1, 1, 1, false}, relu);
}

/// Projects the shallow tap, upsamples deep features to it, concatenates,
/// maps to `classes` channels with a 3x3 conv and upsamples to (out_h, out_w).
inline std::string add_decoder(NetworkGraph& g, const std::string& prefix, const std::string& deep, std::size_t deep_ch,
                               const std::string& shallow_tap, std::size_t proj_ch, std::size_t classes, std::size_t out_h, std::size_t out_w,
                               const Shape& input_shape) {
  if (!g.taps().count(shallow_tap)) throw Error(Errc::tap_missing, "decoder needs tap " + shallow_tap);
  const std::string shallow = g.tap(shallow_tap);
  const auto shapes = g.infer_shapes(input_shape);
  const Shape ss = shapes.at(shallow), ds = shapes.at(deep);
  if (ss.h < ds.h || ss.w < ds.w) throw Error(Errc::shape_mismatch, "shallow tap smaller than deep features");
  const std::string proj = add_conv_bn_act(g, prefix + ".shallow", shallow, {ss.c, proj_ch, 1, 1, 1, 1, false}, {ActKind::ReLU});
  g.add_layer({prefix + ".deep_up", UpsampleSpec{ss.h, ss.w}, {deep}});
  g.add_layer({prefix + ".concat", ConcatSpec{}, {prefix + ".deep_up", proj}});
  add_conv(g, prefix + ".classifier", prefix + ".concat", {deep_ch + proj_ch, classes, 3, 1, 1, 1, false});
  g.add_layer({prefix + ".logits", UpsampleSpec{out_h, out_w}, {prefix + ".classifier"}});
  return prefix + ".logits";
}

/// Kaiming-uniform conv weights, unit/zero batch norm, PReLU slopes 0.25.
inline void init_params(NetworkGraph& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& l : g.layers()) {
    if (const auto* c = std::get_if<Conv2dSpec>(&l.op)) {
      Tensor w(c->weight_shape());
      const double fan_in = double(c->in_ch / c->groups * c->kernel * c->kernel);
      std::uniform_real_distribution<float> dist(-float(std::sqrt(6.0 / fan_in)), float(std::sqrt(6.0 / fan_in)));
      for (float& v : w.data()) v = dist(rng);
      g.set_param(param_key(l.name, "weight"), std::move(w));
      if (c->has_bias) g.set_param(param_key(l.name, "bias"), Tensor(channel_vector_shape(c->out_ch)));
    } else if (const auto* b = std::get_if<BatchNormSpec>(&l.op)) {
      g.set_param(param_key(l.name, "gamma"), Tensor(channel_vector_shape(b->ch), 1.0f));
      g.set_param(param_key(l.name, "beta"), Tensor(channel_vector_shape(b->ch)));
      g.set_param(param_key(l.name, "running_mean"), Tensor(channel_vector_shape(b->ch)));
      g.set_param(param_key(l.name, "running_var"), Tensor(channel_vector_shape(b->ch), 1.0f));
    } else if (const auto* a = std::get_if<ActivationSpec>(&l.op); a && a->kind == ActKind::PReLU) {
      g.set_param(param_key(l.name, "slope"), Tensor(channel_vector_shape(a->channels), 0.25f));
    }
  }
}

/// A graph together with the configuration it was built from.
struct SegmentationModel {
  ModelConfig config;
  NetworkGraph graph;

  Shape input_shape(std::size_t batch) const { return {batch, config.in_ch, config.in_h, config.in_w}; }
};

/// Stem conv (stride 2) + bottlenecks + ASPP + decoder. Taps: "stem",
/// "low" (last feature map at the stem's resolution, feeding the decoder)
/// and "deep" (final block, feeding ASPP).
inline SegmentationModel build_segmentation_model(const ModelConfig& cfg) {
  cfg.validate();
  SegmentationModel m{cfg, NetworkGraph(cfg.in_ch)};
  NetworkGraph& g = m.graph;
  const ActivationSpec block_act{cfg.activation, cfg.elu_alpha};
  const std::size_t stem_ch = cfg.scaled(cfg.stem_filters);

  std::string x = add_conv_bn_act(g, "stem", kGraphInput, {cfg.in_ch, stem_ch, 3, 2, 1, 1, false}, {ActKind::HardSwish});
  g.set_tap("stem", x);

  std::size_t ch = stem_ch, stride = 2;
  std::string low = x;
  for (std::size_t i = 0; i < cfg.bottlenecks; ++i) {
    const BottleneckSpec b = cfg.schedule()[i];
    stride *= b.stride;
    x = add_bottleneck(g, "block" + std::to_string(i + 1), x, ch, b, block_act, b.stride == 1 && ch == b.out_ch);
    ch = b.out_ch;
    if (stride == 2) low = x;
  }
  g.set_tap("low", low);
  g.set_tap("deep", x);

  const Shape in = m.input_shape(1);
  const Shape deep_shape = g.infer_shapes(in).at(x);
  const std::size_t aspp_ch = cfg.scaled(cfg.aspp_channels);
  x = add_aspp(g, "aspp", x, ch, cfg.aspp_rates, aspp_ch, deep_shape.h, deep_shape.w);
  x = add_decoder(g, "decoder", x, aspp_ch, "low", cfg.scaled(cfg.decoder_channels), cfg.classes, cfg.in_h, cfg.in_w, in);
  g.set_output(x);
  init_params(g, cfg.seed);
  g.validate(in);
  return m;
}

inline Tensor model_forward(const SegmentationModel& m, const Tensor& input, const ExecOptions& opt = {}) {
  const Shape& s = input.shape();
  if (s.c != m.config.in_ch || s.h != m.config.in_h || s.w != m.config.in_w)
    throw Error(Errc::shape_mismatch, "model expects Nx" + std::to_string(m.config.in_ch) + "x" + std::to_string(m.config.in_h) + "x" +
                                          std::to_string(m.config.in_w) + ", got " + s.str());
  return forward(m.graph, input, opt);
}

/// Inference freeze: every batch norm fed only by a conv is folded into that
/// conv (which gains a bias) and removed; consumers and taps are rewired.
inline NetworkGraph freeze(const NetworkGraph& src) {
  std::map<std::string, std::size_t> consumers;
  for (const auto& l : src.layers())
    for (const auto& in : l.inputs) ++consumers[in];

  std::map<std::string, std::string> folded_into;  // bn name -> conv name
  for (const auto& l : src.layers()) {
    if (!std::holds_alternative<BatchNormSpec>(l.op)) continue;
    const std::string& producer = l.inputs[0];
    if (producer == kGraphInput) continue;
    const LayerSpec& p = src.layer(producer);
    if (std::holds_alternative<Conv2dSpec>(p.op) && consumers[producer] == 1 && src.quant(producer).precision == Precision::FP32 &&
        src.param(param_key(producer, "weight")).dtype() == DType::F32)
      folded_into[l.name] = producer;
  }
  auto resolve = [&](const std::string& n) {
    auto it = folded_into.find(n);
    return it == folded_into.end() ? n : it->second;
  };
  std::map<std::string, std::string> conv_bn;  // conv -> its bn
  for (const auto& [bn, conv] : folded_into) conv_bn[conv] = bn;

  NetworkGraph out(src.input_channels());
  for (const auto& l : src.layers()) {
    if (folded_into.count(l.name)) continue;
    LayerSpec copy = l;
    for (auto& in : copy.inputs) in = resolve(in);
    auto cb = conv_bn.find(l.name);
    if (cb != conv_bn.end()) {
      auto& c = std::get<Conv2dSpec>(copy.op);
      const auto& bn = src.layer(cb->second);
      const auto& bs = std::get<BatchNormSpec>(bn.op);
      const auto [a, b] = batchnorm_affine(bs, src.param(param_key(bn.name, "gamma")), src.param(param_key(bn.name, "beta")),
                                           src.param(param_key(bn.name, "running_mean")), src.param(param_key(bn.name, "running_var")));
      Tensor w = src.param(param_key(l.name, "weight"));
      const std::size_t per = w.numel() / c.out_ch;
      for (std::size_t o = 0; o < c.out_ch; ++o)
        for (std::size_t i = 0; i < per; ++i) w[o * per + i] *= a[o];
      Tensor bias(channel_vector_shape(c.out_ch));
      for (std::size_t o = 0; o < c.out_ch; ++o) bias[o] = (c.has_bias ? a[o] * src.param(param_key(l.name, "bias"))[o] : 0.0f) + b[o];
      c.has_bias = true;
      out.add_layer(copy);
      out.set_param(param_key(l.name, "weight"), std::move(w));
      out.set_param(param_key(l.name, "bias"), std::move(bias));
    } else {
      out.add_layer(copy);
      for (const auto& k : src.param_names(l)) out.set_param(k, src.param(k));
    }
    if (src.quant_map().count(l.name)) out.set_quant(l.name, src.quant(l.name));
  }
  for (const auto& [tap, lname] : src.taps()) out.set_tap(tap, resolve(lname));
  out.set_output(resolve(src.output()));
  return out;
}

inline SegmentationModel freeze(const SegmentationModel& m) { return {m.config, freeze(m.graph)}; }

// ---------------------------------------------------------------------------
// Model file

inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

inline void write_quant_params(std::ostream& os, const QuantParams& p) {
  using namespace binio;
  put_u8(os, static_cast<std::uint8_t>(p.granularity));
  put_u8(os, p.symmetric ? 1 : 0);
  put_u8(os, p.axis);
  put_i32(os, p.zero_point);
  put_i32(os, p.qmin);
  put_i32(os, p.qmax);
  put_u32(os, static_cast<std::uint32_t>(p.scale.size()));
  for (float s : p.scale) put_f32(os, s);
}

inline QuantParams read_quant_params(std::istream& is) {
  using namespace binio;
  QuantParams p;
  const auto gran = get_u8(is);
  if (gran > 1) throw Error(Errc::corrupt_file, "granularity code");
  p.granularity = static_cast<Granularity>(gran);
  p.symmetric = get_u8(is) != 0;
  p.axis = get_u8(is);
  p.zero_point = get_i32(is);
  p.qmin = get_i32(is);
  p.qmax = get_i32(is);
  const auto n = get_u32(is);
  if (n > (1u << 20)) throw Error(Errc::corrupt_file, "scale count");
  p.scale.resize(n);
  for (auto& s : p.scale) s = get_f32(is);
  p.validate();
  return p;
}

inline void write_config(std::ostream& os, const ModelConfig& c) {
  using namespace binio;
  for (std::size_t v : {c.in_h, c.in_w, c.in_ch, c.stem_filters, c.bottlenecks}) put_u32(os, static_cast<std::uint32_t>(v));
  put_f32(os, c.width_mult);
  for (std::size_t r : c.aspp_rates) put_u32(os, static_cast<std::uint32_t>(r));
  for (std::size_t v : {c.aspp_channels, c.decoder_channels, c.classes}) put_u32(os, static_cast<std::uint32_t>(v));
  put_u8(os, static_cast<std::uint8_t>(c.activation));
  put_f32(os, c.elu_alpha);
  put_u64(os, c.seed);
}

inline ModelConfig read_config(std::istream& is) {
  using namespace binio;
  ModelConfig c;
  c.in_h = get_u32(is);
  c.in_w = get_u32(is);
  c.in_ch = get_u32(is);
  c.stem_filters = get_u32(is);
  c.bottlenecks = get_u32(is);
  c.width_mult = get_f32(is);
  for (auto& r : c.aspp_rates) r = get_u32(is);
  c.aspp_channels = get_u32(is);
  c.decoder_channels = get_u32(is);
  c.classes = get_u32(is);
  const auto act = get_u8(is);
  if (act > 3) throw Error(Errc::corrupt_file, "activation code");
  c.activation = static_cast<ActKind>(act);
  c.elu_alpha = get_f32(is);
  c.seed = get_u64(is);
  return c;
}

inline void write_op(std::ostream& os, const LayerOp& op) {
  using namespace binio;
  put_u8(os, static_cast<std::uint8_t>(op.index()));
  if (const auto* c = std::get_if<Conv2dSpec>(&op)) {
    for (std::size_t v : {c->in_ch, c->out_ch, c->kernel, c->stride, c->dilation, c->groups}) put_u32(os, static_cast<std::uint32_t>(v));
    put_u8(os, c->has_bias ? 1 : 0);
  } else if (const auto* b = std::get_if<BatchNormSpec>(&op)) {
    put_u32(os, static_cast<std::uint32_t>(b->ch));
    put_f32(os, b->eps);
    put_f32(os, b->momentum);
  } else if (const auto* a = std::get_if<ActivationSpec>(&op)) {
    put_u8(os, static_cast<std::uint8_t>(a->kind));
    put_f32(os, a->alpha);
    put_u32(os, static_cast<std::uint32_t>(a->channels));
  } else if (const auto* u = std::get_if<UpsampleSpec>(&op)) {
    put_u32(os, static_cast<std::uint32_t>(u->out_h));
    put_u32(os, static_cast<std::uint32_t>(u->out_w));
  }
}

inline LayerOp read_op(std::istream& is) {
  using namespace binio;
  switch (get_u8(is)) {
    case 0: {
      Conv2dSpec c;
      c.in_ch = get_u32(is);
      c.out_ch = get_u32(is);
      c.kernel = get_u32(is);
      c.stride = get_u32(is);
      c.dilation = get_u32(is);
      c.groups = get_u32(is);
      c.has_bias = get_u8(is) != 0;
      return c;
    }
    case 1: {
      BatchNormSpec b;
      b.ch = get_u32(is);
      b.eps = get_f32(is);
      b.momentum = get_f32(is);
      return b;
    }
    case 2: {
      ActivationSpec a;
      const auto k = get_u8(is);
      if (k > 3) throw Error(Errc::corrupt_file, "activation kind");
      a.kind = static_cast<ActKind>(k);
      a.alpha = get_f32(is);
      a.channels = get_u32(is);
      return a;
    }
    case 3: {
      UpsampleSpec u;
      u.out_h = get_u32(is);
      u.out_w = get_u32(is);
      return u;
    }
    case 4: return GlobalAvgPoolSpec{};
    case 5: return ConcatSpec{};
    case 6: return AddSpec{};
    default: throw Error(Errc::corrupt_file, "unknown layer kind");
  }
}

}  // namespace detail

/// Layout (little-endian):
///   "EMBM" | u32 version | ModelConfig | u32 input channels
///   u32 layer count, per layer: name | op | inputs | u8 precision | activation params
///   u32 tap count, per tap: name | layer ; output layer name
///   u32 param count, per param: name | tensor record ("EMBT")
inline void write_model(std::ostream& os, const SegmentationModel& m) {
  using namespace binio;
  const NetworkGraph& g = m.graph;
  put_bytes(os, "EMBM", 4);
  put_u32(os, kModelFormatVersion);
  detail::write_config(os, m.config);
  put_u32(os, static_cast<std::uint32_t>(g.input_channels()));
  put_u32(os, static_cast<std::uint32_t>(g.layers().size()));
  for (const auto& l : g.layers()) {
    put_str(os, l.name);
    detail::write_op(os, l.op);
    put_u32(os, static_cast<std::uint32_t>(l.inputs.size()));
    for (const auto& in : l.inputs) put_str(os, in);
    const LayerQuant& q = g.quant(l.name);
    put_u8(os, static_cast<std::uint8_t>(q.precision));
    put_u32(os, static_cast<std::uint32_t>(q.input_params.size()));
    for (const auto& p : q.input_params) detail::write_quant_params(os, p);
  }
  put_u32(os, static_cast<std::uint32_t>(g.taps().size()));
  for (const auto& [tap, lname] : g.taps()) {
    put_str(os, tap);
    put_str(os, lname);
  }
  put_str(os, g.output());
  put_u32(os, static_cast<std::uint32_t>(g.params().size()));
  for (const auto& [k, t] : g.params()) {
    put_str(os, k);
    write_tensor(os, t);
  }
}

inline SegmentationModel read_model(std::istream& is) {
  using namespace binio;
  expect_magic(is, "EMBM", "model file");
  const std::uint32_t version = get_u32(is);
  if (version != kModelFormatVersion) throw Error(Errc::version_mismatch, "model format version " + std::to_string(version));
  try {
    SegmentationModel m;
    m.config = detail::read_config(is);
    m.graph = NetworkGraph(get_u32(is));
    const std::uint32_t layers = get_u32(is);
    if (layers > 100000) throw Error(Errc::corrupt_file, "layer count");
    for (std::uint32_t i = 0; i < layers; ++i) {
      LayerSpec l;
      l.name = get_str(is);
      l.op = detail::read_op(is);
      const std::uint32_t nin = get_u32(is);
      if (nin > 64) throw Error(Errc::corrupt_file, "input count");
      for (std::uint32_t k = 0; k < nin; ++k) l.inputs.push_back(get_str(is));
      LayerQuant q;
      const auto prec = get_u8(is);
      if (prec > 2) throw Error(Errc::corrupt_file, "precision code");
      q.precision = static_cast<Precision>(prec);
      const std::uint32_t np = get_u32(is);
      if (np > 64) throw Error(Errc::corrupt_file, "activation param count");
      for (std::uint32_t k = 0; k < np; ++k) q.input_params.push_back(detail::read_quant_params(is));
      const std::string name = l.name;
      m.graph.add_layer(std::move(l));
      if (q.precision != Precision::FP32 || !q.input_params.empty()) m.graph.set_quant(name, std::move(q));
    }
    const std::uint32_t taps = get_u32(is);
    for (std::uint32_t i = 0; i < taps; ++i) {
      std::string tap = get_str(is);
      m.graph.set_tap(tap, get_str(is));
    }
    m.graph.set_output(get_str(is));
    const std::uint32_t params = get_u32(is);
    for (std::uint32_t i = 0; i < params; ++i) {
      std::string k = get_str(is);
      m.graph.set_param(k, read_tensor(is));
    }
    m.graph.validate(m.input_shape(1));
    return m;
  } catch (const Error& e) {
    if (e.code() == Errc::version_mismatch || e.code() == Errc::corrupt_file) throw;
    throw Error(Errc::corrupt_file, e.what());
  }
}

inline void save_model(const std::string& path, const SegmentationModel& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(Errc::io_failure, "cannot open " + path);
  write_model(os, m);
}

inline SegmentationModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::io_failure, "cannot open " + path);
  return read_model(is);
}

}  // namespace ember
