#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ember/augment.hpp"
#include "ember/dataset.hpp"
#include "ember/error.hpp"
#include "ember/executor.hpp"
#include "ember/kv_config.hpp"
#include "ember/loss.hpp"
#include "ember/metrics.hpp"
#include "ember/model.hpp"
#include "ember/optim.hpp"

namespace ember {

// ---------------------------------------------------------------------------
// One optimisation step

struct StepResult {
  bool skipped = false;
  double loss = 0.0;
  Gradients grads;  // unscaled
  Tensor output;
};

/// Forward (binary16 conv casts when `opt.amp`), loss, backward of the loss
/// multiplied by the current scale, then unscaling. A non-finite gradient
/// marks the step skipped and is reported to the scaler.
inline StepResult amp_forward_backward(NetworkGraph& g, const Tensor& x, std::span<const std::uint8_t> labels, LossScaler& scaler,
                                       const ExecOptions& opt = {}) {
  StepResult r;
  Trace t = forward_train(g, x, opt);
  const float s = scaler.scale();
  LossResult l = cross_entropy_loss(t.output, labels, s);
  r.loss = l.loss;
  r.grads = backward(g, t, l.grad);
  r.output = std::move(t.output);
  bool finite = std::isfinite(r.loss);
  for (const auto& [k, gr] : r.grads.params) finite = finite && all_finite(gr);
  if (!finite) {
    r.skipped = true;
    scaler.update(true);
    return r;
  }
  const float inv = 1.0f / s;
  for (auto& [k, gr] : r.grads.params)
    for (float& v : gr.data()) v *= inv;
  for (float& v : r.grads.input.data()) v *= inv;
  scaler.update(false);
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double loss = 0.0;
  ConfusionMatrix cm{2};
  double mpa = 0.0;         // class-mean pixel accuracy
  double pixel_acc = 0.0;   // global pixel accuracy
  double miou = 0.0;
};

inline EvalResult finish_eval(ConfusionMatrix cm, double loss) {
  EvalResult r{loss, std::move(cm)};
  const PixelAccuracy pa = mpa(r.cm);
  r.mpa = pa.class_mean;
  r.pixel_acc = pa.global;
  r.miou = miou(r.cm);
  return r;
}

/// Eval-mode pass over `samples` in batches; loss is the pixel mean.
inline EvalResult evaluate(const NetworkGraph& g, std::span<const Sample> samples, std::size_t batch = 2, const ExecOptions& opt = {}) {
  if (samples.empty()) throw Error(Errc::empty_split, "nothing to evaluate");
  ConfusionMatrix cm(2);
  double loss = 0.0;
  std::size_t pixels = 0;
  for (std::size_t b = 0; b < samples.size(); b += batch) {
    const auto [x, m] = make_batch(samples.subspan(b, std::min(batch, samples.size() - b)));
    const Tensor y = forward(g, x, opt);
    loss += cross_entropy_loss(y, m).loss * double(m.size());
    pixels += m.size();
    cm.update(argmax_mask(y), m);
  }
  return finish_eval(std::move(cm), loss / double(pixels));
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 2;
  std::size_t val_every = 200;
  SplitFractions fractions;
  std::uint64_t seed = 0;
  bool amp = false;
  bool dynamic_loss_scale = false;
  float loss_scale = 128.0f;
  bool qat = false;
  std::size_t qat_start_epoch = 2;  // zero-based: fake quantization from the third epoch
  ActKind activation = ActKind::ReLU;
  CosineSchedule schedule;
  float beta1 = 0.9f, beta2 = 0.99f, weight_decay = 0.01f;
  bool augment = true;
  AugmentConfig augmentation;

  void validate() const {
    fractions.validate();
    if (batch_size < 1) throw Error(Errc::invalid_config, "batch size must be >= 1");
    if (epochs < 1) throw Error(Errc::invalid_config, "epochs must be >= 1");
    if (val_every < 1) throw Error(Errc::invalid_config, "validation cadence must be >= 1");
    if (!(schedule.lr_max > 0.0f)) throw Error(Errc::invalid_config, "learning rate must be positive");
  }
};

struct HistoryRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double mpa = 0.0;
  double miou = 0.0;

  friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  SegmentationModel final_model;
  SegmentationModel best_model;
  double best_val_loss = 0.0;
  std::size_t best_step = 0;
  LionState lion;
  LossScaler scaler = LossScaler::fixed(1.0f);
  LionState best_lion;
  LossScaler best_scaler = LossScaler::fixed(1.0f);
  std::size_t steps = 0;
  std::size_t skipped = 0;
  EvalResult best_val;
};

inline std::size_t steps_per_epoch(std::size_t train_size, std::size_t batch) { return (train_size + batch - 1) / batch; }

namespace detail {
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Trains `model` on `data.train`, validating on `data.val` every
/// `val_every` steps and at the end of each epoch. The best checkpoint is the
/// one with the lowest validation loss (earliest on ties).
inline TrainResult train(SegmentationModel model, const Split& data, const TrainConfig& cfg, const std::function<void(const HistoryRow&)>& on_row = {}) {
  cfg.validate();
  if (data.train.empty()) throw Error(Errc::empty_split, "training split is empty");
  if (data.val.empty()) throw Error(Errc::empty_split, "validation split is empty");

  TrainResult r{{}, model, model, 0.0, 0, {}, LossScaler::fixed(1.0f), {}, LossScaler::fixed(1.0f), 0, 0, {}};
  r.lion.beta1 = cfg.beta1;
  r.lion.beta2 = cfg.beta2;
  r.lion.weight_decay = cfg.weight_decay;
  r.scaler = !cfg.amp ? LossScaler::fixed(1.0f) : cfg.dynamic_loss_scale ? LossScaler::dynamic(cfg.loss_scale) : LossScaler::fixed(cfg.loss_scale);
  r.best_val_loss = std::numeric_limits<double>::infinity();

  QatState qat;
  ExecOptions train_opt;
  train_opt.amp = cfg.amp;
  if (cfg.qat) train_opt.qat = &qat;
  ExecOptions eval_opt;
  if (cfg.qat) eval_opt.qat = &qat;

  NetworkGraph& g = model.graph;
  const std::size_t per_epoch = steps_per_epoch(data.train.size(), cfg.batch_size);
  const std::size_t total = per_epoch * cfg.epochs;
  std::size_t step = 0, last_val = 0;

  auto emit = [&](HistoryRow row) {
    if (on_row) on_row(row);
    r.history.push_back(std::move(row));
  };
  auto validate_now = [&](std::size_t epoch) {
    EvalResult v = evaluate(g, data.val, cfg.batch_size, eval_opt);
    emit({step, epoch, "val", v.loss, v.mpa, v.miou});
    if (v.loss < r.best_val_loss) {
      r.best_val_loss = v.loss;
      r.best_step = step;
      r.best_model = model;
      r.best_lion = r.lion;
      r.best_scaler = r.scaler;
      r.best_val = v;
    }
    last_val = step;
  };

  std::vector<std::size_t> order(data.train.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    qat.enabled = cfg.qat && epoch >= cfg.qat_start_epoch;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(detail::mix_seed(cfg.seed, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng() % i]);

    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<Sample> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) {
        const Sample& s = data.train[order[k]];
        if (cfg.augment) {
          std::mt19937_64 rng(detail::mix_seed(detail::mix_seed(cfg.seed, epoch), k));
          batch.push_back(augment(s, rng, cfg.augmentation));
        } else {
          batch.push_back(s);
        }
      }
      const auto [x, m] = make_batch(batch);
      StepResult sr = amp_forward_backward(g, x, m, r.scaler, train_opt);
      if (!sr.skipped) {
        lion_step(g, sr.grads.params, r.lion, cfg.schedule.at(step, total));
      } else {
        ++r.skipped;
      }
      ++step;
      ConfusionMatrix cm(2);
      cm.update(argmax_mask(sr.output), m);
      const EvalResult tr = finish_eval(std::move(cm), sr.loss);
      emit({step, epoch, "train", tr.loss, tr.mpa, tr.miou});
      if (step % cfg.val_every == 0) validate_now(epoch);
    }
    if (last_val != step) validate_now(epoch);
  }
  r.steps = step;
  r.final_model = std::move(model);
  return r;
}

// ---------------------------------------------------------------------------
// History and checkpoints

inline std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::ostringstream os;
  os << "step,epoch,split,loss,mpa,miou\n";
  os.precision(9);
  for (const auto& r : rows) os << r.step << ',' << r.epoch << ',' << r.split << ',' << r.loss << ',' << r.mpa << ',' << r.miou << '\n';
  return os.str();
}

inline std::vector<HistoryRow> parse_history_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "step,epoch,split,loss,mpa,miou") throw Error(Errc::corrupt_file, "history header missing");
  std::vector<HistoryRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f[6];
    for (auto& field : f)
      if (!std::getline(ls, field, ',')) throw Error(Errc::corrupt_file, "history row has fewer than 6 fields");
    try {
      rows.push_back({std::stoul(f[0]), std::stoul(f[1]), f[2], std::stod(f[3]), std::stod(f[4]), std::stod(f[5])});
    } catch (const std::exception&) {
      throw Error(Errc::corrupt_file, "history row is not numeric: " + line);
    }
  }
  return rows;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::io_failure, "cannot write " + path);
  f << text;
  if (!f) throw Error(Errc::io_failure, "write failed for " + path);
}

struct Checkpoint {
  SegmentationModel model;
  LionState lion;
  LossScaler scaler = LossScaler::fixed(1.0f);
};

/// A checkpoint directory holds model.embm, lion.bin and scaler.json.
inline std::vector<std::string> save_checkpoint(const std::string& dir, const Checkpoint& c) {
  std::filesystem::create_directories(dir);
  const auto base = std::filesystem::path(dir);
  save_model((base / "model.embm").string(), c.model);
  {
    std::ofstream f(base / "lion.bin", std::ios::binary);
    if (!f) throw Error(Errc::io_failure, "cannot write optimizer state in " + dir);
    write_lion(f, c.lion);
  }
  write_text_file((base / "scaler.json").string(), c.scaler.to_json().dump(2) + "\n");
  return {(base / "model.embm").string(), (base / "lion.bin").string(), (base / "scaler.json").string()};
}

inline Checkpoint load_checkpoint(const std::string& dir) {
  const auto base = std::filesystem::path(dir);
  Checkpoint c{load_model((base / "model.embm").string()), {}, LossScaler::fixed(1.0f)};
  std::ifstream f(base / "lion.bin", std::ios::binary);
  if (!f) throw Error(Errc::io_failure, "cannot open optimizer state in " + dir);
  c.lion = read_lion(f);
  const std::string text = read_text_file((base / "scaler.json").string());
  try {
    c.scaler = LossScaler::from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::corrupt_file, std::string("scaler state: ") + e.what());
  }
  return c;
}

}  // namespace ember
