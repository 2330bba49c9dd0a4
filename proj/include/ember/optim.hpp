#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "ember/error.hpp"
#include "ember/executor.hpp"
#include "ember/graph.hpp"
#include "ember/tensor_io.hpp"

namespace ember {

// ---------------------------------------------------------------------------
// Lion

struct LionState {
  float beta1 = 0.9f;
  float beta2 = 0.99f;
  float weight_decay = 0.01f;
  std::uint64_t steps = 0;
  std::map<std::string, Tensor> momentum;

  void validate() const {
    if (!(beta1 > 0.0f && beta1 < 1.0f && beta2 > 0.0f && beta2 < 1.0f)) throw Error(Errc::invalid_config, "Lion betas must lie in (0, 1)");
    if (!(weight_decay >= 0.0f)) throw Error(Errc::invalid_config, "weight decay must be >= 0");
  }

  friend bool operator==(const LionState& a, const LionState& b) {
    if (a.beta1 != b.beta1 || a.beta2 != b.beta2 || a.weight_decay != b.weight_decay || a.steps != b.steps || a.momentum.size() != b.momentum.size())
      return false;
    for (const auto& [k, m] : a.momentum) {
      auto it = b.momentum.find(k);
      if (it == b.momentum.end() || !(it->second.shape() == m.shape()) || !std::equal(m.data().begin(), m.data().end(), it->second.data().begin()))
        return false;
    }
    return true;
  }
};

inline float sign0(float v) { return v > 0.0f ? 1.0f : v < 0.0f ? -1.0f : 0.0f; }

inline bool all_finite(const Tensor& t) {
  for (float v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

/// One Lion update of a single tensor:
///   c = b1*m + (1-b1)*g;  w -= lr*(sign(c) + wd*w);  m = b2*m + (1-b2)*g
inline void lion_update(Tensor& w, const Tensor& g, Tensor& m, const LionState& s, float lr) {
  if (!(w.shape() == g.shape()) || !(w.shape() == m.shape())) throw Error(Errc::shape_mismatch, "Lion operands differ in shape");
  for (std::size_t i = 0; i < w.numel(); ++i) {
    const float c = s.beta1 * m[i] + (1.0f - s.beta1) * g[i];
    w[i] -= lr * (sign0(c) + s.weight_decay * w[i]);
    m[i] = s.beta2 * m[i] + (1.0f - s.beta2) * g[i];
  }
}

/// Updates every trainable parameter of `g`. All gradients are checked before
/// anything is modified.
inline void lion_step(NetworkGraph& g, const std::map<std::string, Tensor>& grads, LionState& s, float lr) {
  s.validate();
  const auto keys = g.trainable_params();
  for (const auto& k : keys) {
    auto it = grads.find(k);
    if (it == grads.end()) throw Error(Errc::missing_params, "no gradient for " + k);
    if (!(it->second.shape() == g.param(k).shape())) throw Error(Errc::shape_mismatch, "gradient for " + k + " has the wrong shape");
    if (!all_finite(it->second)) throw Error(Errc::nonfinite_grad, "gradient for " + k + " is not finite");
  }
  for (const auto& k : keys) {
    Tensor& w = g.param(k);
    if (w.dtype() != DType::F32) throw Error(Errc::invalid_argument, "Lion updates F32 parameters only; " + k + " is " + dtype_name(w.dtype()));
    auto [mit, fresh] = s.momentum.try_emplace(k, Tensor(w.shape()));
    lion_update(w, grads.at(k), mit->second, s, lr);
  }
  ++s.steps;
}

inline void write_lion(std::ostream& os, const LionState& s) {
  using namespace binio;
  put_bytes(os, "EMBL", 4);
  put_u32(os, 1);
  put_f32(os, s.beta1);
  put_f32(os, s.beta2);
  put_f32(os, s.weight_decay);
  put_u64(os, s.steps);
  put_u32(os, static_cast<std::uint32_t>(s.momentum.size()));
  for (const auto& [k, m] : s.momentum) {
    put_str(os, k);
    write_tensor(os, m);
  }
}

inline LionState read_lion(std::istream& is) {
  using namespace binio;
  expect_magic(is, "EMBL", "optimizer state");
  if (const auto v = get_u32(is); v != 1) throw Error(Errc::version_mismatch, "optimizer state version " + std::to_string(v));
  LionState s;
  s.beta1 = get_f32(is);
  s.beta2 = get_f32(is);
  s.weight_decay = get_f32(is);
  s.steps = get_u64(is);
  const std::uint32_t n = get_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string k = get_str(is);
    s.momentum.emplace(std::move(k), read_tensor(is));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Loss scaling

class LossScaler {
 public:
  enum class Mode : std::uint8_t { Static, Dynamic };

  static constexpr float kMaxScale = 16777216.0f;  // 2^24

  static LossScaler fixed(float scale = 128.0f) { return LossScaler(Mode::Static, scale); }
  static LossScaler dynamic(float init = 128.0f, std::uint32_t growth_interval = 200) {
    LossScaler s(Mode::Dynamic, init);
    s.growth_interval_ = growth_interval;
    return s;
  }

  Mode mode() const { return mode_; }
  float scale() const { return scale_; }
  std::uint64_t skipped() const { return skipped_; }
  std::uint32_t good_steps() const { return good_; }
  std::uint32_t growth_interval() const { return growth_interval_; }

  /// Records a step outcome. Overflow: skip; dynamic mode also halves the
  /// scale. Dynamic mode doubles after `growth_interval` clean steps.
  void update(bool overflow) {
    if (overflow) {
      ++skipped_;
      good_ = 0;
      if (mode_ == Mode::Dynamic) scale_ = std::max(1.0f, scale_ * 0.5f);
      return;
    }
    if (mode_ != Mode::Dynamic) return;
    if (++good_ >= growth_interval_) {
      good_ = 0;
      scale_ = std::min(kMaxScale, scale_ * 2.0f);
    }
  }

  nlohmann::json to_json() const {
    return {{"mode", mode_ == Mode::Static ? "static" : "dynamic"}, {"scale", scale_}, {"skipped", skipped_}, {"good_steps", good_}, {"growth_interval", growth_interval_}};
  }

  static LossScaler from_json(const nlohmann::json& j) {
    try {
      LossScaler s(j.at("mode") == "static" ? Mode::Static : Mode::Dynamic, j.at("scale").get<float>());
      s.skipped_ = j.at("skipped");
      s.good_ = j.at("good_steps");
      s.growth_interval_ = j.at("growth_interval");
      return s;
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::corrupt_file, std::string("scaler state: ") + e.what());
    }
  }

  friend bool operator==(const LossScaler&, const LossScaler&) = default;

 private:
  LossScaler(Mode m, float scale) : mode_(m), scale_(scale) {
    int e = 0;
    if (!(scale > 0.0f) || std::frexp(scale, &e) != 0.5f || scale > kMaxScale) throw Error(Errc::invalid_config, "loss scale must be a power of two in (0, 2^24]");
  }

  Mode mode_;
  float scale_;
  std::uint64_t skipped_ = 0;
  std::uint32_t good_ = 0;
  std::uint32_t growth_interval_ = 200;
};

// ---------------------------------------------------------------------------
// Learning-rate schedule

/// Linear warmup over the first `warmup` fraction of steps, then cosine decay
/// to `lr_min`.
struct CosineSchedule {
  float lr_max = 3e-4f;
  float lr_min = 0.0f;
  double warmup = 0.05;

  float at(std::size_t step, std::size_t total) const {
    if (total == 0) return lr_max;
    const auto w = static_cast<std::size_t>(std::ceil(warmup * double(total)));
    if (step < w) return lr_max * float(step + 1) / float(w);
    const double t = w >= total ? 1.0 : double(step - w) / double(total - w);
    return lr_min + (lr_max - lr_min) * static_cast<float>(0.5 * (1.0 + std::cos(3.141592653589793 * std::min(t, 1.0))));
  }
};

}  // namespace ember
