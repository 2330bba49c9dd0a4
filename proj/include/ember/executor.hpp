#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "ember/alloc_tracker.hpp"
#include "ember/graph.hpp"
#include "ember/ops.hpp"
#include "ember/quant_params.hpp"
#include "ember/tensor.hpp"

namespace ember {

/// Fake-quantization state for quantization-aware training: per-conv
/// moving-average observers of the input range. Weights use per-channel
/// symmetric scales from their current values.
class QatState {
 public:
  bool enabled = false;
  float decay = 0.99f;

  void observe(const std::string& layer, const Tensor& x) {
    const auto [lo, hi] = std::minmax_element(x.data().begin(), x.data().end());
    if (lo == x.data().end()) return;
    Range& r = ranges_[layer];
    if (!r.init) {
      r = {*lo, *hi, true};
    } else {
      r.lo = decay * r.lo + (1.0f - decay) * *lo;
      r.hi = decay * r.hi + (1.0f - decay) * *hi;
    }
  }

  QuantParams activation_params(const std::string& layer, const Tensor& x) const {
    auto it = ranges_.find(layer);
    if (it != ranges_.end()) return range_params(it->second.lo, it->second.hi, false);
    const auto [lo, hi] = std::minmax_element(x.data().begin(), x.data().end());
    return range_params(*lo, *hi, false);
  }

  static QuantParams weight_params(const Tensor& w) {
    const std::size_t per = w.numel() / w.shape().n;
    std::vector<float> scales(w.shape().n);
    for (std::size_t o = 0; o < w.shape().n; ++o) {
      float m = 0.0f;
      for (std::size_t i = 0; i < per; ++i) m = std::max(m, std::abs(w[o * per + i]));
      scales[o] = m > 0.0f ? m / 127.0f : 1.0f;
    }
    return QuantParams::per_channel(std::move(scales), 0);
  }

 private:
  struct Range {
    float lo = 0.0f, hi = 0.0f;
    bool init = false;
  };
  std::map<std::string, Range> ranges_;
};

/// Fake quantization with the straight-through mask (1 inside the clip range).
inline Tensor fake_quant_tensor(const Tensor& x, const QuantParams& p, std::vector<std::uint8_t>* mask = nullptr) {
  x.check_params(p);
  Tensor y(x.shape());
  if (mask) mask->assign(x.numel(), 0);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t ch = p.granularity == Granularity::PerChannel ? x.channel_of(i, p.axis) : 0;
    y[i] = fake_quant(x[i], p, ch);
    if (mask) (*mask)[i] = in_clip_range(x[i], p, ch) ? 1 : 0;
  }
  return y;
}

inline Tensor round_tensor_to_half(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = round_to_half(x[i]);
  return y;
}

struct ExecOptions {
  /// Round conv inputs and weights through binary16 before compute.
  bool amp = false;
  /// Fake-quantize conv inputs and weights; observers update in training.
  QatState* qat = nullptr;
  /// Called with ("input", x) and each layer's output (eval only).
  std::function<void(const std::string&, const Tensor&)> observer;
};

struct LayerTrace {
  std::vector<Tensor> inputs;  // as consumed by the kernel
  Tensor weight;               // effective conv weight
  std::vector<std::uint8_t> input_mask, weight_mask;
  BatchNormCache bn;
  std::vector<Shape> input_shapes;
};

struct Trace {
  Shape input_shape;
  std::vector<LayerTrace> layers;
  Tensor output;
};

struct Gradients {
  std::map<std::string, Tensor> params;
  Tensor input;
};

namespace detail {

inline void accumulate(Tensor& into, Tensor&& g) {
  if (into.empty()) {
    into = std::move(g);
    return;
  }
  for (std::size_t i = 0; i < into.numel(); ++i) into[i] += g[i];
}

class LayerRunner {
 public:
  LayerRunner(const NetworkGraph& g, NetworkGraph* mut, const ExecOptions& opt, bool train) : g_(g), mut_(mut), opt_(opt), train_(train) {}

  Tensor run(const LayerSpec& l, std::vector<const Tensor*> ins, LayerTrace* tr) {
    const LayerQuant& q = train_ ? kFp32 : g_.quant(l.name);
    std::vector<Tensor> cast;
    if (q.precision != Precision::FP32) {
      cast.reserve(ins.size());
      for (std::size_t k = 0; k < ins.size(); ++k) {
        if (q.precision == Precision::FP16) {
          cast.push_back(round_tensor_to_half(*ins[k]));
        } else {
          if (k >= q.input_params.size()) throw Error(Errc::missing_stats, "int8 layer " + l.name + " lacks activation params for input " + l.inputs[k]);
          cast.push_back(fake_quant_tensor(*ins[k], q.input_params[k]));
        }
        ins[k] = &cast.back();
      }
    }
    if (tr)
      for (const Tensor* t : ins) tr->input_shapes.push_back(t->shape());

    Tensor out = std::visit([&](const auto& op) { return apply(op, l, ins, tr); }, l.op);
    if (q.precision == Precision::FP16) out = round_tensor_to_half(out);
    return out;
  }

 private:
  static inline const LayerQuant kFp32{};

  const Tensor& real_param(const std::string& key, Tensor& holder) const {
    const Tensor& t = g_.param(key);
    if (t.dtype() != DType::I8) return t;
    holder = to_f32(t);
    return holder;
  }

  Tensor apply(const Conv2dSpec& s, const LayerSpec& l, const std::vector<const Tensor*>& ins, LayerTrace* tr) {
    Tensor wh, bh;
    const Tensor& w0 = real_param(param_key(l.name, "weight"), wh);
    const Tensor* bias = s.has_bias ? &real_param(param_key(l.name, "bias"), bh) : nullptr;
    const Tensor* x = ins[0];
    const Tensor* w = &w0;
    Tensor xq, wq;
    std::vector<std::uint8_t> imask, wmask;
    if (opt_.qat) {
      if (train_) opt_.qat->observe(l.name, *x);
      if (opt_.qat->enabled) {
        xq = fake_quant_tensor(*x, opt_.qat->activation_params(l.name, *x), tr ? &imask : nullptr);
        wq = fake_quant_tensor(*w, QatState::weight_params(*w), tr ? &wmask : nullptr);
        x = &xq;
        w = &wq;
      }
    }
    if (opt_.amp) {
      xq = round_tensor_to_half(*x);
      wq = round_tensor_to_half(*w);
      x = &xq;
      w = &wq;
    }
    Tensor out = conv2d_forward(*x, s, *w, bias);
    if (tr) {
      tr->inputs.push_back(*x);
      tr->weight = *w;
      tr->input_mask = std::move(imask);
      tr->weight_mask = std::move(wmask);
    }
    return out;
  }

  Tensor apply(const BatchNormSpec& s, const LayerSpec& l, const std::vector<const Tensor*>& ins, LayerTrace* tr) {
    Tensor h1, h2;
    const Tensor& gamma = real_param(param_key(l.name, "gamma"), h1);
    const Tensor& beta = real_param(param_key(l.name, "beta"), h2);
    if (train_) {
      return batchnorm_forward_train(*ins[0], s, gamma, beta, mut_->param(param_key(l.name, "running_mean")),
                                     mut_->param(param_key(l.name, "running_var")), tr ? &tr->bn : nullptr);
    }
    Tensor h3, h4;
    return batchnorm_forward_eval(*ins[0], s, gamma, beta, real_param(param_key(l.name, "running_mean"), h3),
                                  real_param(param_key(l.name, "running_var"), h4));
  }

  Tensor apply(const ActivationSpec& s, const LayerSpec& l, const std::vector<const Tensor*>& ins, LayerTrace* tr) {
    Tensor h;
    const Tensor* slope = s.kind == ActKind::PReLU ? &real_param(param_key(l.name, "slope"), h) : nullptr;
    if (tr) tr->inputs.push_back(*ins[0]);
    return activation_forward(*ins[0], s, slope);
  }

  Tensor apply(const UpsampleSpec& s, const LayerSpec&, const std::vector<const Tensor*>& ins, LayerTrace*) {
    return bilinear_resize(*ins[0], s.out_h, s.out_w);
  }
  Tensor apply(const GlobalAvgPoolSpec&, const LayerSpec&, const std::vector<const Tensor*>& ins, LayerTrace*) { return global_avg_pool(*ins[0]); }
  Tensor apply(const ConcatSpec&, const LayerSpec&, const std::vector<const Tensor*>& ins, LayerTrace*) { return concat_channels(ins); }
  Tensor apply(const AddSpec&, const LayerSpec&, const std::vector<const Tensor*>& ins, LayerTrace*) { return add(*ins[0], *ins[1]); }

  const NetworkGraph& g_;
  NetworkGraph* mut_;
  const ExecOptions& opt_;
  bool train_;
};

}  // namespace detail

/// Training-mode forward: batch statistics (running estimates in `g` are
/// updated), QAT observers updated, everything needed by `backward` kept.
inline Trace forward_train(NetworkGraph& g, const Tensor& x, const ExecOptions& opt = {}) {
  g.infer_shapes(x.shape());
  Trace t;
  t.input_shape = x.shape();
  const auto& layers = g.layers();
  t.layers.resize(layers.size());
  std::vector<Tensor> outs(layers.size());
  detail::LayerRunner runner(g, &g, opt, true);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    TagScope tag(l.name);
    std::vector<const Tensor*> ins;
    for (const auto& in : l.inputs) ins.push_back(in == kGraphInput ? &x : &outs[g.layer_index(in)]);
    outs[i] = runner.run(l, ins, &t.layers[i]);
  }
  t.output = outs[g.layer_index(g.output())];
  return t;
}

/// Inference forward honoring per-layer precision. Intermediate outputs are
/// released as soon as their last consumer has run.
inline Tensor forward(const NetworkGraph& g, const Tensor& x, const ExecOptions& opt = {}) {
  g.infer_shapes(x.shape());
  const auto& layers = g.layers();
  const std::size_t out_idx = g.layer_index(g.output());
  std::vector<std::size_t> last_use(layers.size(), 0);
  for (std::size_t i = 0; i < layers.size(); ++i)
    for (const auto& in : layers[i].inputs)
      if (in != kGraphInput) last_use[g.layer_index(in)] = i;

  if (opt.observer) opt.observer(kGraphInput, x);
  std::vector<Tensor> outs(layers.size());
  detail::LayerRunner runner(g, nullptr, opt, false);
  for (std::size_t i = 0; i <= out_idx; ++i) {
    const LayerSpec& l = layers[i];
    TagScope tag(l.name);
    std::vector<const Tensor*> ins;
    for (const auto& in : l.inputs) ins.push_back(in == kGraphInput ? &x : &outs[g.layer_index(in)]);
    outs[i] = runner.run(l, ins, nullptr);
    if (opt.observer) opt.observer(l.name, outs[i]);
    for (const auto& in : l.inputs) {
      if (in == kGraphInput) continue;
      const std::size_t j = g.layer_index(in);
      if (last_use[j] == i && j != out_idx) outs[j] = Tensor();
    }
  }
  return std::move(outs[out_idx]);
}

inline Gradients backward(const NetworkGraph& g, const Trace& t, const Tensor& grad_output) {
  const auto& layers = g.layers();
  if (t.layers.size() != layers.size()) throw Error(Errc::shape_mismatch, "trace does not belong to this graph");
  if (!(grad_output.shape() == t.output.shape())) throw Error(Errc::shape_mismatch, "grad_output " + grad_output.shape().str() + " vs " + t.output.shape().str());
  Gradients grads;
  std::vector<Tensor> gout(layers.size());
  gout[g.layer_index(g.output())] = grad_output;

  auto send = [&](const std::string& to, Tensor&& grad) {
    detail::accumulate(to == kGraphInput ? grads.input : gout[g.layer_index(to)], std::move(grad));
  };
  auto param_grad = [&](const std::string& key, Tensor&& grad) { detail::accumulate(grads.params[key], std::move(grad)); };
  auto real = [&](const std::string& key) { return to_f32(g.param(key)); };

  for (std::size_t i = layers.size(); i-- > 0;) {
    if (gout[i].empty()) continue;
    const LayerSpec& l = layers[i];
    const LayerTrace& tr = t.layers[i];
    Tensor& go = gout[i];
    if (const auto* s = std::get_if<Conv2dSpec>(&l.op)) {
      ConvGrads cg = conv2d_backward(go, tr.inputs[0], *s, tr.weight);
      if (!tr.weight_mask.empty())
        for (std::size_t k = 0; k < cg.weight.numel(); ++k)
          if (!tr.weight_mask[k]) cg.weight[k] = 0.0f;
      if (!tr.input_mask.empty())
        for (std::size_t k = 0; k < cg.input.numel(); ++k)
          if (!tr.input_mask[k]) cg.input[k] = 0.0f;
      param_grad(param_key(l.name, "weight"), std::move(cg.weight));
      if (s->has_bias) param_grad(param_key(l.name, "bias"), std::move(cg.bias));
      send(l.inputs[0], std::move(cg.input));
    } else if (std::holds_alternative<BatchNormSpec>(l.op)) {
      BatchNormGrads bg = batchnorm_backward(go, tr.bn, real(param_key(l.name, "gamma")));
      param_grad(param_key(l.name, "gamma"), std::move(bg.gamma));
      param_grad(param_key(l.name, "beta"), std::move(bg.beta));
      send(l.inputs[0], std::move(bg.input));
    } else if (const auto* a = std::get_if<ActivationSpec>(&l.op)) {
      Tensor slope;
      if (a->kind == ActKind::PReLU) slope = real(param_key(l.name, "slope"));
      ActivationGrads ag = activation_backward(go, tr.inputs[0], *a, a->kind == ActKind::PReLU ? &slope : nullptr);
      if (a->kind == ActKind::PReLU) param_grad(param_key(l.name, "slope"), std::move(ag.slope));
      send(l.inputs[0], std::move(ag.input));
    } else if (std::holds_alternative<UpsampleSpec>(l.op)) {
      send(l.inputs[0], bilinear_resize_backward(go, tr.input_shapes[0].h, tr.input_shapes[0].w));
    } else if (std::holds_alternative<GlobalAvgPoolSpec>(l.op)) {
      send(l.inputs[0], global_avg_pool_backward(go, tr.input_shapes[0]));
    } else if (std::holds_alternative<ConcatSpec>(l.op)) {
      std::vector<std::size_t> chans;
      for (const auto& s : tr.input_shapes) chans.push_back(s.c);
      auto parts = split_channels(go, chans);
      for (std::size_t k = 0; k < parts.size(); ++k) send(l.inputs[k], std::move(parts[k]));
    } else if (std::holds_alternative<AddSpec>(l.op)) {
      send(l.inputs[0], Tensor(go));
      send(l.inputs[1], std::move(go));
    }
    gout[i] = Tensor();
  }
  // Parameters that received no gradient (unreachable from the output) get zeros.
  for (const auto& k : g.trainable_params())
    if (!grads.params.count(k)) grads.params[k] = Tensor(g.param(k).shape());
  if (grads.input.empty()) grads.input = Tensor(t.input_shape);
  return grads;
}

}  // namespace ember
