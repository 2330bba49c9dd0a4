#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ember/error.hpp"
#include "ember/executor.hpp"
#include "ember/graph.hpp"
#include "ember/kv_config.hpp"
#include "ember/quant_params.hpp"
#include "ember/tensor_io.hpp"

namespace ember {

// ---------------------------------------------------------------------------
// Calibration methods

struct CalibMethod {
  enum class Kind : std::uint8_t { MinMax, MovingAvgMinMax, Percentile, Entropy };

  Kind kind = Kind::MinMax;
  float decay = 0.99f;          // MovingAvgMinMax
  double percentile = 0.9999;   // Percentile, in (0, 1]
  std::size_t bins = 2048;      // Entropy

  static CalibMethod minmax() { return {}; }
  static CalibMethod moving_avg(float decay = 0.99f) { return {Kind::MovingAvgMinMax, decay}; }
  static CalibMethod percentile_of(double p = 0.9999) { return {Kind::Percentile, 0.99f, p}; }
  static CalibMethod entropy(std::size_t bins = 2048) { return {Kind::Entropy, 0.99f, 0.9999, bins}; }

  void validate() const {
    if (!(percentile > 0.0 && percentile <= 1.0)) throw Error(Errc::invalid_config, "percentile must be in (0, 1]");
    if (bins < 16) throw Error(Errc::invalid_config, "entropy calibration needs at least 16 bins");
    if (!(decay > 0.0f && decay < 1.0f)) throw Error(Errc::invalid_config, "moving-average decay must be in (0, 1)");
  }
};

inline const char* calib_name(CalibMethod::Kind k) {
  switch (k) {
    case CalibMethod::Kind::MinMax: return "minmax";
    case CalibMethod::Kind::MovingAvgMinMax: return "moving_avg";
    case CalibMethod::Kind::Percentile: return "percentile";
    case CalibMethod::Kind::Entropy: return "entropy";
  }
  return "?";
}

inline std::optional<CalibMethod::Kind> parse_calib(const std::string& s) {
  for (auto k : {CalibMethod::Kind::MinMax, CalibMethod::Kind::MovingAvgMinMax, CalibMethod::Kind::Percentile, CalibMethod::Kind::Entropy})
    if (s == calib_name(k)) return k;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Activation statistics

/// Observed range of one tensor over the calibration set. The histogram
/// covers |x| over [0, abs_max] in equal bins and holds one count per element.
struct ActivationStats {
  float min = std::numeric_limits<float>::infinity();
  float max = -std::numeric_limits<float>::infinity();
  std::uint64_t count = 0;
  float abs_max = 0.0f;
  std::vector<std::uint64_t> histogram;
  std::vector<float> batch_min, batch_max;
  std::vector<float> channel_min, channel_max;
  /// SQNR of per-tensor min/max INT8 fake quantization of this tensor.
  double sqnr_db = std::numeric_limits<double>::infinity();

  std::uint64_t histogram_mass() const {
    std::uint64_t m = 0;
    for (auto h : histogram) m += h;
    return m;
  }

  void observe_range(const Tensor& x) {
    float lo = std::numeric_limits<float>::infinity(), hi = -lo;
    const Shape& s = x.shape();
    if (channel_min.empty()) {
      channel_min.assign(s.c, std::numeric_limits<float>::infinity());
      channel_max.assign(s.c, -std::numeric_limits<float>::infinity());
    }
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const float v = x[i];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      const std::size_t c = (i / s.plane()) % s.c;
      channel_min[c] = std::min(channel_min[c], v);
      channel_max[c] = std::max(channel_max[c], v);
    }
    min = std::min(min, lo);
    max = std::max(max, hi);
    batch_min.push_back(lo);
    batch_max.push_back(hi);
    count += x.numel();
    abs_max = std::max(std::abs(min), std::abs(max));
  }

  void observe_histogram(const Tensor& x, std::size_t bins) {
    if (histogram.empty()) histogram.assign(bins, 0);
    const double scale = abs_max > 0.0f ? double(bins) / double(abs_max) : 0.0;
    for (float v : x.data()) {
      auto b = static_cast<std::size_t>(std::abs(double(v)) * scale);
      ++histogram[std::min(b, bins - 1)];
    }
  }
};

using StatsMap = std::map<std::string, ActivationStats>;

/// Records every layer output (and the graph input) over the first
/// `n_batches` calibration batches. Two passes: extrema first, then histograms
/// over the final range. Deterministic for a fixed batch order.
inline StatsMap collect_stats(const NetworkGraph& g, std::span<const Tensor> batches, std::size_t n_batches = 100, std::size_t bins = 2048) {
  if (batches.empty() || n_batches == 0) throw Error(Errc::empty_calibration_set, "no calibration batches");
  if (bins < 16) throw Error(Errc::invalid_config, "histogram needs at least 16 bins");
  const std::size_t used = std::min(n_batches, batches.size());
  StatsMap stats;
  ExecOptions opt;
  opt.observer = [&](const std::string& name, const Tensor& t) { stats[name].observe_range(t); };
  for (std::size_t b = 0; b < used; ++b) forward(g, batches[b], opt);

  std::map<std::string, QuantParams> probe;
  std::map<std::string, std::pair<double, double>> power;  // signal, noise
  for (auto& [name, s] : stats) probe[name] = range_params(s.min, s.max, false);
  opt.observer = [&](const std::string& name, const Tensor& t) {
    ActivationStats& s = stats[name];
    s.observe_histogram(t, bins);
    const QuantParams& p = probe[name];
    auto& [sig, noise] = power[name];
    for (float v : t.data()) {
      const double e = double(v) - fake_quant(v, p);
      sig += double(v) * v;
      noise += e * e;
    }
  };
  for (std::size_t b = 0; b < used; ++b) forward(g, batches[b], opt);
  for (auto& [name, s] : stats) {
    const auto [sig, noise] = power[name];
    s.sqnr_db = noise > 0.0 ? 10.0 * std::log10(sig / noise) : std::numeric_limits<double>::infinity();
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Scale selection

struct EntropyResult {
  std::size_t bins_kept = 0;
  double threshold = 0.0;
  double kl = 0.0;
};

namespace detail {

// Normalizes and moves `eps` of mass onto empty bins. False when the
// distribution has no mass at all.
inline bool smooth_distribution(std::vector<double>& d, double eps = 1e-9) {
  double total = 0.0;
  std::size_t zeros = 0;
  for (double v : d) {
    total += v;
    zeros += v == 0.0;
  }
  if (total <= 0.0 || zeros == d.size()) return false;
  const double take = eps * double(zeros) / double(d.size() - zeros);
  for (double& v : d) v = v == 0.0 ? eps : v / total - take;
  return true;
}

}  // namespace detail

/// Clip threshold minimizing KL(reference || quantized) over candidate bin
/// counts i in [levels, B]. The reference keeps bins [0, i) with the clipped
/// tail folded into bin i-1; the candidate merges the same bins into `levels`
/// groups (the last group absorbs the remainder) and spreads each group's
/// mass evenly over its non-empty bins.
inline EntropyResult entropy_threshold(std::span<const std::uint64_t> hist, double abs_max, std::size_t levels = 128) {
  const std::size_t B = hist.size();
  if (B == 0) return {0, abs_max, 0.0};
  levels = std::min(levels, B);
  EntropyResult best{B, abs_max, std::numeric_limits<double>::infinity()};
  std::vector<double> suffix(B + 1, 0.0);
  for (std::size_t k = B; k-- > 0;) suffix[k] = suffix[k + 1] + double(hist[k]);

  std::vector<double> p, q;
  for (std::size_t i = levels; i <= B; ++i) {
    p.assign(hist.begin(), hist.begin() + i);
    p[i - 1] += suffix[i];
    q.assign(i, 0.0);
    const std::size_t merged = i / levels;
    for (std::size_t j = 0; j < levels; ++j) {
      const std::size_t start = j * merged;
      const std::size_t stop = j + 1 == levels ? i : start + merged;
      double total = 0.0;
      std::size_t nonzero = 0;
      for (std::size_t k = start; k < stop; ++k) {
        total += double(hist[k]);
        nonzero += hist[k] != 0;
      }
      if (nonzero == 0) continue;
      for (std::size_t k = start; k < stop; ++k)
        if (hist[k] != 0) q[k] = total / double(nonzero);
    }
    if (!detail::smooth_distribution(p) || !detail::smooth_distribution(q)) continue;
    double kl = 0.0;
    for (std::size_t k = 0; k < i; ++k) kl += p[k] * std::log(p[k] / q[k]);
    if (kl < best.kl) best = {i, i == B ? abs_max : double(i) * abs_max / double(B), kl};
  }
  if (!std::isfinite(best.kl)) best = {B, abs_max, 0.0};
  return best;
}

struct CalibResult {
  QuantParams params;
  bool degenerate = false;
  double clip_lo = 0.0, clip_hi = 0.0;
};

namespace detail {

// Smallest |x| bin edge below which at least p of the mass lies.
inline double abs_quantile(const ActivationStats& s, double p) {
  if (p >= 1.0 || s.histogram.empty()) return s.abs_max;
  const double target = p * double(s.histogram_mass());
  double cum = 0.0;
  for (std::size_t k = 0; k < s.histogram.size(); ++k) {
    cum += double(s.histogram[k]);
    if (cum >= target) return double(k + 1) * s.abs_max / double(s.histogram.size());
  }
  return s.abs_max;
}

}  // namespace detail

/// MinMax: s=(max-min)/255 with z=round(qmin - min/s), or max|x|/127
/// symmetric. Percentile and Entropy pick a clip threshold T on |x| and apply
/// the same formulas to [max(min,-T), min(max,T)]. MovingAvgMinMax runs an
/// exponential average over per-batch extrema.
inline CalibResult compute_scale(const ActivationStats& s, const CalibMethod& m, bool symmetric) {
  m.validate();
  if (s.count == 0) throw Error(Errc::empty_calibration_set, "statistics are empty");
  double lo = s.min, hi = s.max;
  switch (m.kind) {
    case CalibMethod::Kind::MinMax:
      break;
    case CalibMethod::Kind::MovingAvgMinMax: {
      lo = s.batch_min.front();
      hi = s.batch_max.front();
      for (std::size_t b = 1; b < s.batch_min.size(); ++b) {
        lo = m.decay * lo + (1.0 - m.decay) * s.batch_min[b];
        hi = m.decay * hi + (1.0 - m.decay) * s.batch_max[b];
      }
      break;
    }
    case CalibMethod::Kind::Percentile: {
      const double t = detail::abs_quantile(s, m.percentile);
      lo = std::max(lo, -t);
      hi = std::min(hi, t);
      break;
    }
    case CalibMethod::Kind::Entropy: {
      if (!s.histogram.empty() && s.histogram.size() != m.bins)
        throw Error(Errc::invalid_config, "statistics hold " + std::to_string(s.histogram.size()) + " bins, entropy method expects " + std::to_string(m.bins));
      const double t = entropy_threshold(s.histogram, s.abs_max).threshold;
      lo = std::max(lo, -t);
      hi = std::min(hi, t);
      break;
    }
  }
  CalibResult r;
  if (lo == hi) {
    r.params = QuantParams::per_tensor(1.0f, 0, symmetric);
    r.degenerate = true;
  } else {
    r.params = range_params(lo, hi, symmetric, &r.degenerate);
  }
  r.clip_lo = lo;
  r.clip_hi = hi;
  return r;
}

// ---------------------------------------------------------------------------
// Fake quantization (QAT building blocks)

inline Tensor fake_quant_forward(const Tensor& x, const QuantParams& p) { return fake_quant_tensor(x, p); }

/// Straight-through estimator: gradient passes inside the clip range only.
inline Tensor fake_quant_backward(const Tensor& grad_out, const Tensor& x, const QuantParams& p) {
  if (!(grad_out.shape() == x.shape())) throw Error(Errc::shape_mismatch, "fake-quant gradient shape");
  x.check_params(p);
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t ch = p.granularity == Granularity::PerChannel ? x.channel_of(i, p.axis) : 0;
    g[i] = in_clip_range(x[i], p, ch) ? grad_out[i] : 0.0f;
  }
  return g;
}

/// Symmetric INT8 weight parameters (axis 0 = output channel).
inline QuantParams weight_params(const Tensor& w, Granularity g) {
  if (g == Granularity::PerChannel) return QatState::weight_params(w);
  float m = 0.0f;
  for (float v : w.data()) m = std::max(m, std::abs(v));
  return QuantParams::per_tensor(m > 0.0f ? m / 127.0f : 1.0f, 0, true);
}

inline Tensor quantize_weights(const Tensor& w, Granularity g) { return cast_tensor(w, DType::I8, weight_params(w, g)); }

inline double weight_quant_mse(const Tensor& w, Granularity g) {
  const Tensor back = to_f32(quantize_weights(w, g));
  double acc = 0.0;
  for (std::size_t i = 0; i < w.numel(); ++i) acc += (double(back[i]) - w[i]) * (double(back[i]) - w[i]);
  return acc / double(w.numel());
}

// ---------------------------------------------------------------------------
// Selective precision policy

/// Precision assignment for the conversion pass. Layers named explicitly keep
/// their assignment (an explicit int8 is how sensitive layers are forced);
/// residual adds take `residual_precision`; everything else takes `fallback`.
struct QuantPolicy {
  std::map<std::string, Precision> layers;
  Precision fallback = Precision::FP16;
  std::optional<Precision> residual_precision = Precision::INT8;
  Granularity weight_granularity = Granularity::PerChannel;
  Granularity activation_granularity = Granularity::PerTensor;
  CalibMethod method = CalibMethod::entropy();
  bool symmetric_activations = false;

  static QuantPolicy all(Precision p) {
    QuantPolicy q;
    q.fallback = p;
    q.residual_precision.reset();
    return q;
  }

  void validate() const {
    method.validate();
    if (activation_granularity == Granularity::PerChannel && method.kind != CalibMethod::Kind::MinMax)
      throw Error(Errc::invalid_config, "per-channel activation scales are only available with minmax calibration");
  }

  /// One precision per layer of `g`. Unknown layer names are rejected.
  std::map<std::string, Precision> resolve(const NetworkGraph& g) const {
    validate();
    for (const auto& [name, p] : layers)
      if (!g.has_layer(name)) throw Error(Errc::unknown_layer, "policy names layer " + name + " which is not in the graph");
    std::map<std::string, Precision> out;
    for (const auto& l : g.layers()) {
      auto it = layers.find(l.name);
      if (it != layers.end())
        out[l.name] = it->second;
      else if (residual_precision && std::holds_alternative<AddSpec>(l.op))
        out[l.name] = *residual_precision;
      else
        out[l.name] = fallback;
    }
    return out;
  }
};

inline Granularity parse_granularity(const std::string& v, std::size_t line) {
  if (v == "per_channel") return Granularity::PerChannel;
  if (v == "per_tensor") return Granularity::PerTensor;
  throw Error(Errc::invalid_config, "line " + std::to_string(line) + ": granularity must be per_channel or per_tensor");
}

/// Policy file: `layer = int8|fp16|fp32` lines (top level or [layers]),
/// plus [policy] fallback/residuals, [granularity] weights/activations and
/// [calibration] method/decay/percentile/bins/symmetric.
inline QuantPolicy parse_policy(std::string_view text) {
  QuantPolicy p;
  auto precision = [](const KvEntry& e) {
    auto v = parse_precision(e.value);
    if (!v) throw Error(Errc::invalid_config, "line " + std::to_string(e.line) + ": precision must be int8, fp16 or fp32");
    return *v;
  };
  auto number = [](const KvEntry& e) {
    try {
      std::size_t used = 0;
      const double v = std::stod(e.value, &used);
      if (used != e.value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw Error(Errc::invalid_config, "line " + std::to_string(e.line) + ": " + e.key + " needs a number");
    }
  };
  for (const KvEntry& e : parse_kv(text)) {
    if (e.section.empty() || e.section == "layers") {
      p.layers[e.key] = precision(e);
    } else if (e.section == "policy") {
      if (e.key == "fallback") p.fallback = precision(e);
      else if (e.key == "residuals") p.residual_precision = e.value == "fallback" ? std::nullopt : std::optional(precision(e));
      else throw Error(Errc::invalid_config, "line " + std::to_string(e.line) + ": unknown policy key " + e.key);
    } else if (e.section == "granularity") {
      if (e.key == "weights") p.weight_granularity = parse_granularity(e.value, e.line);
      else if (e.key == "activations") p.activation_granularity = parse_granularity(e.value, e.line);
      else throw Error(Errc::invalid_config, "line " + std::to_string(e.line) + ": unknown granularity key " + e.key);
    } else if (e.section == "calibration" || e.section == "method") {
      if (e.key == "method") {
        auto k = parse_calib(e.value);
        if (!k) throw Error(Errc::invalid_config, "line " + std::to_string(e.line) + ": method must be minmax, moving_avg, percentile or entropy");
        p.method.kind = *k;
      } else if (e.key == "decay") {
        p.method.decay = static_cast<float>(number(e));
      } else if (e.key == "percentile") {
        p.method.percentile = number(e);
      } else if (e.key == "bins") {
        p.method.bins = static_cast<std::size_t>(number(e));
      } else if (e.key == "symmetric") {
        p.symmetric_activations = e.value == "true" || e.value == "1";
      } else {
        throw Error(Errc::invalid_config, "line " + std::to_string(e.line) + ": unknown calibration key " + e.key);
      }
    } else {
      throw Error(Errc::invalid_config, "line " + std::to_string(e.line) + ": unknown section [" + e.section + "]");
    }
  }
  p.validate();
  return p;
}

inline std::string default_policy_text() {
  return "# Selective precision: residual adds in int8, everything else fp16.\n"
         "[policy]\n"
         "fallback = fp16\n"
         "residuals = int8\n"
         "\n"
         "[granularity]\n"
         "weights = per_channel\n"
         "activations = per_tensor\n"
         "\n"
         "[calibration]\n"
         "method = entropy\n"
         "bins = 2048\n"
         "\n"
         "[layers]\n"
         "# layer_name = int8|fp16|fp32\n";
}

// ---------------------------------------------------------------------------
// Conversion pass

struct LayerPrecisionReport {
  std::string name;
  std::string op;
  Precision precision = Precision::FP32;
  std::size_t param_bytes_before = 0;
  std::size_t param_bytes_after = 0;
  std::optional<float> weight_scale_min, weight_scale_max;
  std::vector<float> input_scales;
  double sqnr_db = std::numeric_limits<double>::infinity();
  bool auto_flagged = false;
};

struct PrecisionReport {
  std::vector<LayerPrecisionReport> layers;
  std::size_t bytes_before = 0;
  std::size_t bytes_after = 0;
  double sqnr_flag_db = 20.0;

  double size_ratio() const { return bytes_before == 0 ? 1.0 : double(bytes_after) / double(bytes_before); }

  std::vector<std::string> auto_flagged() const {
    std::vector<std::string> out;
    for (const auto& l : layers)
      if (l.auto_flagged) out.push_back(l.name);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["bytes_before"] = bytes_before;
    j["bytes_after"] = bytes_after;
    j["size_ratio"] = size_ratio();
    j["auto_flag_sqnr_db"] = sqnr_flag_db;
    j["auto_flagged"] = auto_flagged();
    auto& arr = j["layers"] = nlohmann::json::array();
    for (const auto& l : layers) {
      nlohmann::json e{{"name", l.name},
                       {"op", l.op},
                       {"precision", precision_name(l.precision)},
                       {"param_bytes_before", l.param_bytes_before},
                       {"param_bytes_after", l.param_bytes_after},
                       {"input_scales", l.input_scales},
                       {"auto_flagged", l.auto_flagged}};
      if (l.weight_scale_min) e["weight_scale_min"] = *l.weight_scale_min;
      if (l.weight_scale_max) e["weight_scale_max"] = *l.weight_scale_max;
      e["sqnr_db"] = std::isfinite(l.sqnr_db) ? nlohmann::json(l.sqnr_db) : nlohmann::json(nullptr);
      arr.push_back(std::move(e));
    }
    return j;
  }

  std::string to_table() const {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-28s %-16s %-5s %10s %10s %9s\n", "layer", "op", "prec", "bytes_in", "bytes_out", "sqnr_db");
    os << buf;
    for (const auto& l : layers) {
      std::snprintf(buf, sizeof buf, "%-28s %-16s %-5s %10zu %10zu %9.2f%s\n", l.name.c_str(), l.op.c_str(), precision_name(l.precision),
                    l.param_bytes_before, l.param_bytes_after, std::isfinite(l.sqnr_db) ? l.sqnr_db : 0.0, l.auto_flagged ? "  [auto-flag: low sqnr]" : "");
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "parameter bytes: %zu -> %zu (ratio %.4f)\n", bytes_before, bytes_after, size_ratio());
    os << buf;
    return os.str();
  }
};

struct PtqResult {
  NetworkGraph graph;
  PrecisionReport report;
};

/// Post-training conversion. INT8 layers get integer weights and one
/// activation QuantParams per input; FP16 layers get re-rounded parameters;
/// FP32 layers are untouched. Wiring, shapes and layer count never change.
/// Layers whose calibration SQNR falls under 20 dB are flagged in the report
/// only; their precision still follows the policy.
inline PtqResult apply_ptq(const NetworkGraph& g, const QuantPolicy& policy, const StatsMap& stats) {
  const auto precision = policy.resolve(g);
  PtqResult r{g, {}};
  NetworkGraph& out = r.graph;
  for (const auto& l : g.layers()) {
    const Precision p = precision.at(l.name);
    LayerPrecisionReport lr;
    lr.name = l.name;
    lr.op = op_name(l.op);
    lr.precision = p;
    if (auto it = stats.find(l.name); it != stats.end()) {
      lr.sqnr_db = it->second.sqnr_db;
      lr.auto_flagged = it->second.sqnr_db < r.report.sqnr_flag_db;
    }
    const auto names = g.param_names(l);
    for (const auto& k : names) lr.param_bytes_before += g.param(k).nbytes();

    LayerQuant q{p, {}};
    if (p == Precision::INT8) {
      for (const auto& in : l.inputs) {
        auto it = stats.find(in);
        if (it == stats.end()) throw Error(Errc::missing_stats, "layer " + l.name + " needs statistics for its input " + in);
        QuantParams ap;
        if (policy.activation_granularity == Granularity::PerChannel) {
          std::vector<float> scales;
          for (std::size_t c = 0; c < it->second.channel_min.size(); ++c)
            scales.push_back(range_params(it->second.channel_min[c], it->second.channel_max[c], true).scale.front());
          ap = QuantParams::per_channel(std::move(scales), 1);
        } else {
          ap = compute_scale(it->second, policy.method, policy.symmetric_activations).params;
        }
        for (float s : ap.scale) lr.input_scales.push_back(s);
        q.input_params.push_back(std::move(ap));
      }
      if (std::holds_alternative<Conv2dSpec>(l.op)) {
        const std::string wk = param_key(l.name, "weight");
        Tensor w = quantize_weights(to_f32(g.param(wk)), policy.weight_granularity);
        const auto& sc = w.quant()->scale;
        lr.weight_scale_min = *std::min_element(sc.begin(), sc.end());
        lr.weight_scale_max = *std::max_element(sc.begin(), sc.end());
        out.set_param(wk, std::move(w));
      }
    } else if (p == Precision::FP16) {
      for (const auto& k : names) out.set_param(k, cast_tensor(g.param(k), DType::F16));
    }
    if (p != Precision::FP32) out.set_quant(l.name, std::move(q));
    for (const auto& k : names) {
      const Tensor& t = out.param(k);
      lr.param_bytes_after += t.nbytes() + (t.quant() ? 4 + quant_block_bytes(*t.quant()) : 0);
    }
    r.report.layers.push_back(std::move(lr));
  }
  r.report.bytes_before = g.param_bytes();
  r.report.bytes_after = out.param_bytes();
  return r;
}

// ---------------------------------------------------------------------------
// Statistics persistence

inline nlohmann::json stats_to_json(const StatsMap& stats) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, s] : stats) {
    j[name] = {{"min", s.min},
               {"max", s.max},
               {"count", s.count},
               {"abs_max", s.abs_max},
               {"histogram", s.histogram},
               {"batch_min", s.batch_min},
               {"batch_max", s.batch_max},
               {"channel_min", s.channel_min},
               {"channel_max", s.channel_max},
               {"sqnr_db", std::isfinite(s.sqnr_db) ? nlohmann::json(s.sqnr_db) : nlohmann::json(nullptr)}};
  }
  return j;
}

inline StatsMap stats_from_json(const nlohmann::json& j) {
  StatsMap out;
  try {
    for (const auto& [name, v] : j.items()) {
      ActivationStats s;
      s.min = v.at("min");
      s.max = v.at("max");
      s.count = v.at("count");
      s.abs_max = v.at("abs_max");
      s.histogram = v.at("histogram").get<std::vector<std::uint64_t>>();
      s.batch_min = v.at("batch_min").get<std::vector<float>>();
      s.batch_max = v.at("batch_max").get<std::vector<float>>();
      s.channel_min = v.at("channel_min").get<std::vector<float>>();
      s.channel_max = v.at("channel_max").get<std::vector<float>>();
      s.sqnr_db = v.at("sqnr_db").is_null() ? std::numeric_limits<double>::infinity() : v.at("sqnr_db").get<double>();
      out[name] = std::move(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::corrupt_file, std::string("statistics file: ") + e.what());
  }
  return out;
}

}  // namespace ember
