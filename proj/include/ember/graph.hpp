#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ember/error.hpp"
#include "ember/ops.hpp"
#include "ember/tensor.hpp"

namespace ember {

struct UpsampleSpec {
  std::size_t out_h = 1;
  std::size_t out_w = 1;
  friend bool operator==(const UpsampleSpec&, const UpsampleSpec&) = default;
};
struct GlobalAvgPoolSpec {
  friend bool operator==(const GlobalAvgPoolSpec&, const GlobalAvgPoolSpec&) = default;
};
struct ConcatSpec {
  friend bool operator==(const ConcatSpec&, const ConcatSpec&) = default;
};
struct AddSpec {
  friend bool operator==(const AddSpec&, const AddSpec&) = default;
};

// Variant order is the on-disk kind code.
using LayerOp = std::variant<Conv2dSpec, BatchNormSpec, ActivationSpec, UpsampleSpec, GlobalAvgPoolSpec, ConcatSpec, AddSpec>;

inline const char* op_name(const LayerOp& op) {
  static constexpr const char* names[] = {"conv2d", "batchnorm", "activation", "upsample", "global_avg_pool", "concat", "add"};
  return names[op.index()];
}

struct LayerSpec {
  std::string name;
  LayerOp op;
  std::vector<std::string> inputs;
};

enum class Precision : std::uint8_t { FP32 = 0, FP16 = 1, INT8 = 2 };

inline const char* precision_name(Precision p) {
  switch (p) {
    case Precision::FP32: return "fp32";
    case Precision::FP16: return "fp16";
    case Precision::INT8: return "int8";
  }
  return "?";
}

inline std::optional<Precision> parse_precision(const std::string& s) {
  for (Precision p : {Precision::FP32, Precision::FP16, Precision::INT8})
    if (s == precision_name(p)) return p;
  return std::nullopt;
}

/// Execution precision of one layer. INT8 layers carry one activation
/// QuantParams per input.
struct LayerQuant {
  Precision precision = Precision::FP32;
  std::vector<QuantParams> input_params;

  friend bool operator==(const LayerQuant&, const LayerQuant&) = default;
};

inline const char* kGraphInput = "input";

inline std::string param_key(const std::string& layer, const char* field) { return layer + "." + field; }

/// Ordered layer DAG. A layer may only consume the graph input or layers
/// added before it, so wiring is acyclic by construction.
class NetworkGraph {
 public:
  NetworkGraph() = default;
  explicit NetworkGraph(std::size_t input_channels) : input_channels_(input_channels) {}

  std::size_t input_channels() const { return input_channels_; }

  const LayerSpec& add_layer(LayerSpec spec) {
    if (spec.name.empty() || spec.name == kGraphInput) throw Error(Errc::invalid_argument, "invalid layer name '" + spec.name + "'");
    if (index_.count(spec.name)) throw Error(Errc::invalid_argument, "duplicate layer name " + spec.name);
    std::visit([&](const auto& op) { check_op(op, spec); }, spec.op);
    for (const auto& in : spec.inputs)
      if (in != kGraphInput && !index_.count(in)) throw Error(Errc::unknown_layer, spec.name + " consumes unknown layer " + in);
    index_[spec.name] = layers_.size();
    layers_.push_back(std::move(spec));
    output_ = layers_.back().name;
    return layers_.back();
  }

  const std::vector<LayerSpec>& layers() const { return layers_; }
  bool has_layer(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t layer_index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error(Errc::unknown_layer, name);
    return it->second;
  }
  const LayerSpec& layer(const std::string& name) const { return layers_[layer_index(name)]; }

  void set_output(const std::string& name) {
    layer_index(name);
    output_ = name;
  }
  const std::string& output() const { return output_; }

  void set_tap(const std::string& tap, const std::string& layer_name) {
    layer_index(layer_name);
    taps_[tap] = layer_name;
  }
  const std::map<std::string, std::string>& taps() const { return taps_; }
  const std::string& tap(const std::string& name) const {
    auto it = taps_.find(name);
    if (it == taps_.end()) throw Error(Errc::tap_missing, "no tap named " + name);
    return it->second;
  }

  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  bool has_param(const std::string& key) const { return params_.count(key) != 0; }
  Tensor& param(const std::string& key) {
    auto it = params_.find(key);
    if (it == params_.end()) throw Error(Errc::missing_params, "parameter " + key);
    return it->second;
  }
  const Tensor& param(const std::string& key) const { return const_cast<NetworkGraph*>(this)->param(key); }
  void set_param(const std::string& key, Tensor t) { params_[key] = std::move(t); }

  const LayerQuant& quant(const std::string& layer_name) const {
    static const LayerQuant kDefault{};
    auto it = quant_.find(layer_name);
    return it == quant_.end() ? kDefault : it->second;
  }
  void set_quant(const std::string& layer_name, LayerQuant q) {
    layer_index(layer_name);
    quant_[layer_name] = std::move(q);
  }
  const std::map<std::string, LayerQuant>& quant_map() const { return quant_; }

  /// Parameter names a layer owns, in a fixed order.
  std::vector<std::string> param_names(const LayerSpec& l) const {
    std::vector<std::string> out;
    if (const auto* c = std::get_if<Conv2dSpec>(&l.op)) {
      out.push_back(param_key(l.name, "weight"));
      if (c->has_bias) out.push_back(param_key(l.name, "bias"));
    } else if (std::holds_alternative<BatchNormSpec>(l.op)) {
      for (const char* f : {"gamma", "beta", "running_mean", "running_var"}) out.push_back(param_key(l.name, f));
    } else if (const auto* a = std::get_if<ActivationSpec>(&l.op); a && a->kind == ActKind::PReLU) {
      out.push_back(param_key(l.name, "slope"));
    }
    return out;
  }

  /// Parameters updated by the optimizer (running statistics excluded).
  std::vector<std::string> trainable_params() const {
    std::vector<std::string> out;
    for (const auto& l : layers_)
      for (auto& k : param_names(l))
        if (k.find(".running_") == std::string::npos) out.push_back(k);
    return out;
  }

  std::map<std::string, Shape> infer_shapes(const Shape& input) const {
    if (input.c != input_channels_)
      throw Error(Errc::shape_mismatch, "graph expects " + std::to_string(input_channels_) + " input channels, got " + input.str());
    std::map<std::string, Shape> shapes;
    shapes[kGraphInput] = input;
    for (const auto& l : layers_) {
      std::vector<Shape> ins;
      for (const auto& in : l.inputs) ins.push_back(shapes.at(in));
      shapes[l.name] = std::visit([&](const auto& op) { return out_shape(op, l, ins); }, l.op);
    }
    return shapes;
  }

  /// Parameters present with the right shapes, taps resolvable, shapes
  /// consistent end to end for `input`.
  void validate(const Shape& input) const {
    for (const auto& [tap, lname] : taps_)
      if (!has_layer(lname)) throw Error(Errc::tap_missing, "tap " + tap + " refers to missing layer " + lname);
    for (const auto& l : layers_)
      for (const auto& k : param_names(l)) {
        const Tensor& t = param(k);
        const Shape want = expected_param_shape(l, k);
        if (!(t.shape() == want)) throw Error(Errc::shape_mismatch, "parameter " + k + " is " + t.shape().str() + ", expected " + want.str());
      }
    infer_shapes(input);
  }

  /// Total serialized parameter payload, counting quantization metadata.
  std::size_t param_bytes() const {
    std::size_t total = 0;
    for (const auto& [k, t] : params_) {
      total += t.nbytes();
      if (t.quant()) total += 4 + 20 + 4 * t.quant()->scale.size();
    }
    return total;
  }

  Shape expected_param_shape(const LayerSpec& l, const std::string& key) const {
    if (const auto* c = std::get_if<Conv2dSpec>(&l.op)) {
      return key == param_key(l.name, "weight") ? c->weight_shape() : channel_vector_shape(c->out_ch);
    }
    if (const auto* b = std::get_if<BatchNormSpec>(&l.op)) return channel_vector_shape(b->ch);
    if (const auto* a = std::get_if<ActivationSpec>(&l.op)) return channel_vector_shape(a->channels);
    throw Error(Errc::invalid_argument, "layer " + l.name + " has no parameters");
  }

 private:
  static void check_op(const Conv2dSpec& c, const LayerSpec& l) {
    c.validate();
    expect_inputs(l, 1);
  }
  static void check_op(const BatchNormSpec& b, const LayerSpec& l) {
    if (b.ch == 0 || !(b.eps > 0.0f) || !(b.momentum >= 0.0f && b.momentum <= 1.0f)) throw Error(Errc::invalid_argument, "batchnorm settings in " + l.name);
    expect_inputs(l, 1);
  }
  static void check_op(const ActivationSpec& a, const LayerSpec& l) {
    if (a.kind == ActKind::PReLU && a.channels == 0) throw Error(Errc::slope_length_mismatch, "PReLU " + l.name + " needs its channel count");
    expect_inputs(l, 1);
  }
  static void check_op(const UpsampleSpec& u, const LayerSpec& l) {
    if (u.out_h == 0 || u.out_w == 0) throw Error(Errc::invalid_argument, "upsample to empty plane in " + l.name);
    expect_inputs(l, 1);
  }
  static void check_op(const GlobalAvgPoolSpec&, const LayerSpec& l) { expect_inputs(l, 1); }
  static void check_op(const ConcatSpec&, const LayerSpec& l) {
    if (l.inputs.size() < 2) throw Error(Errc::invalid_argument, "concat " + l.name + " needs at least two inputs");
  }
  static void check_op(const AddSpec&, const LayerSpec& l) { expect_inputs(l, 2); }

  static void expect_inputs(const LayerSpec& l, std::size_t n) {
    if (l.inputs.size() != n) throw Error(Errc::invalid_argument, l.name + " takes " + std::to_string(n) + " input(s)");
  }

  static Shape out_shape(const Conv2dSpec& c, const LayerSpec& l, const std::vector<Shape>& in) {
    if (in[0].c != c.in_ch) throw Error(Errc::shape_mismatch, l.name + " expects " + std::to_string(c.in_ch) + " channels, got " + in[0].str());
    return {in[0].n, c.out_ch, c.out_size(in[0].h), c.out_size(in[0].w)};
  }
  static Shape out_shape(const BatchNormSpec& b, const LayerSpec& l, const std::vector<Shape>& in) {
    if (in[0].c != b.ch) throw Error(Errc::shape_mismatch, l.name + " channel count");
    return in[0];
  }
  static Shape out_shape(const ActivationSpec& a, const LayerSpec& l, const std::vector<Shape>& in) {
    if (a.kind == ActKind::PReLU && a.channels != in[0].c) throw Error(Errc::slope_length_mismatch, l.name + " slope count");
    return in[0];
  }
  static Shape out_shape(const UpsampleSpec& u, const LayerSpec&, const std::vector<Shape>& in) { return {in[0].n, in[0].c, u.out_h, u.out_w}; }
  static Shape out_shape(const GlobalAvgPoolSpec&, const LayerSpec&, const std::vector<Shape>& in) { return {in[0].n, in[0].c, 1, 1}; }
  static Shape out_shape(const ConcatSpec&, const LayerSpec& l, const std::vector<Shape>& in) {
    Shape s = in[0];
    s.c = 0;
    for (const auto& x : in) {
      if (x.n != s.n || x.h != s.h || x.w != s.w) throw Error(Errc::shape_mismatch, l.name + " joins mismatched planes");
      s.c += x.c;
    }
    return s;
  }
  static Shape out_shape(const AddSpec&, const LayerSpec& l, const std::vector<Shape>& in) {
    if (!(in[0] == in[1])) throw Error(Errc::residual_shape_mismatch, l.name + ": " + in[0].str() + " + " + in[1].str());
    return in[0];
  }

  std::size_t input_channels_ = 3;
  std::vector<LayerSpec> layers_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::string> taps_;
  std::map<std::string, Tensor> params_;
  std::map<std::string, LayerQuant> quant_;
  std::string output_;
};

}  // namespace ember
