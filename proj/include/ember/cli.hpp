#pragma once

// Command-line driver: train, calibrate, quantize, eval, bench, report.
// Links against OpenSSL (libcrypto) for content hashes.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "ember/bench.hpp"
#include "ember/dataset.hpp"
#include "ember/error.hpp"
#include "ember/kv_config.hpp"
#include "ember/metrics.hpp"
#include "ember/model.hpp"
#include "ember/quantization.hpp"
#include "ember/trainer.hpp"

namespace ember::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

// ---------------------------------------------------------------------------
// Content hashes and run manifests

/// Hex SHA-1 of "blob <size>\0<content>", matching `git hash-object`.
inline std::string git_blob_sha1(std::string_view content) {
  std::string buf = "blob " + std::to_string(content.size());
  buf.push_back('\0');
  buf.append(content);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(buf.data(), buf.size(), md, &len, EVP_sha1(), nullptr) != 1) throw Error(Errc::io_failure, "SHA-1 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string file_sha1(const std::string& path) { return git_blob_sha1(read_text_file(path)); }

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs, outputs;
  bool deterministic = true;
  std::string started, finished;

  nlohmann::json to_json() const {
    auto hashed = [](const std::vector<std::string>& paths) {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& p : paths) a.push_back({{"path", p}, {"sha1", std::filesystem::is_regular_file(p) ? file_sha1(p) : ""}});
      return a;
    };
    return {{"command", command}, {"argv", argv},     {"config", config},        {"seed", seed},         {"inputs", hashed(inputs)},
            {"outputs", hashed(outputs)}, {"deterministic", deterministic}, {"started", started}, {"finished", finished}};
  }
};

// ---------------------------------------------------------------------------
// Options

struct DataOptions {
  std::size_t synthetic = 64;
  std::string manifest;
  std::size_t size = 64;
  double train_frac = 0.70, val_frac = 0.15, test_frac = 0.15;
  bool strict_masks = false;
};

struct Options {
  std::uint64_t seed = 0;
  std::string out = "run";

  DataOptions data;

  // train
  std::size_t epochs = 30;
  std::size_t batch = 2;
  std::string activation = "relu";
  float lr = 3e-4f;
  std::size_t val_every = 200;
  bool amp = false;
  float loss_scale = 128.0f;
  bool dynamic_scale = false;
  bool qat = false;
  bool no_augment = false;
  std::size_t bottlenecks = 3;
  float width_mult = 0.25f;

  // calibrate / quantize / eval / bench
  std::string model;
  std::size_t calib_batches = 100;
  std::size_t bins = 2048;
  std::string stats;
  std::string policy;
  std::string split = "test";
  bool augment_test = false;
  std::string quantized;
  std::vector<std::size_t> batches{2, 4, 8, 16, 32};
  std::size_t warmup = 10;
  std::size_t iters = 100;

  // report
  std::vector<std::string> evals;
  std::string bench;
  std::string history;
};

struct CliApp {
  CLI::App app{"ember: fire segmentation with selective precision"};
  Options o;
  CLI::App* train = nullptr;
  CLI::App* calibrate = nullptr;
  CLI::App* quantize = nullptr;
  CLI::App* eval = nullptr;
  CLI::App* bench = nullptr;
  CLI::App* report = nullptr;
};

inline void add_data_options(CLI::App* sub, DataOptions& d) {
  auto* syn = sub->add_option("--synthetic", d.synthetic, "Generate N synthetic samples (used when --manifest is absent)")->capture_default_str();
  sub->add_option("--manifest", d.manifest, "Dataset manifest: image<TAB>mask per line (PPM P6 / PGM P5)")->excludes(syn);
  sub->add_option("--size", d.size, "Square image side for synthetic data and manifest resizing")->capture_default_str()->check(CLI::Range(16, 4096));
  sub->add_option("--train-frac", d.train_frac, "Training split fraction")->capture_default_str();
  sub->add_option("--val-frac", d.val_frac, "Validation split fraction")->capture_default_str();
  sub->add_option("--test-frac", d.test_frac, "Test split fraction (absorbs rounding)")->capture_default_str();
  sub->add_flag("--strict-masks", d.strict_masks, "Reject masks holding values other than 0 and 255");
}

inline std::unique_ptr<CliApp> make_app() {
  auto c = std::make_unique<CliApp>();
  CLI::App& app = c->app;
  Options& o = c->o;
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Config file of `key = value` lines; [section] names a subcommand. Flags override it");
  app.add_option("--seed", o.seed, "Seed for data generation, splitting, init and augmentation")->envname("EMBER_SEED")->capture_default_str();
  app.add_option("--out", o.out, "Run directory receiving every output")->capture_default_str();

  auto* t = c->train = app.add_subcommand("train", "Train the segmentation model; writes checkpoint/, history.csv");
  add_data_options(t, o.data);
  t->add_option("--epochs", o.epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  t->add_option("--batch", o.batch, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  t->add_option("--activation", o.activation, "Bottleneck activation")->capture_default_str()->check(CLI::IsMember({"relu", "elu", "prelu"}));
  t->add_option("--lr", o.lr, "Peak learning rate (cosine decay, 5% warmup)")->capture_default_str()->check(CLI::PositiveNumber);
  t->add_option("--val-every", o.val_every, "Validate every N optimizer steps (and at each epoch end)")->capture_default_str()->check(CLI::PositiveNumber);
  t->add_flag("--amp", o.amp, "Binary16 convolution casts with loss scaling");
  t->add_option("--loss-scale", o.loss_scale, "Initial loss scale (power of two)")->capture_default_str();
  t->add_flag("--dynamic-scale", o.dynamic_scale, "Grow/back off the loss scale dynamically");
  t->add_flag("--qat", o.qat, "Fake-quantize conv weights and inputs from the third epoch");
  t->add_flag("--no-augment", o.no_augment, "Disable flip and perspective augmentation");
  t->add_option("--bottlenecks", o.bottlenecks, "Number of inverted-residual blocks")->capture_default_str()->check(CLI::Range(1, 15));
  t->add_option("--width-mult", o.width_mult, "Channel width multiplier")->capture_default_str()->check(CLI::PositiveNumber);

  auto* cal = c->calibrate = app.add_subcommand("calibrate", "Collect activation statistics on the training split; writes stats.json");
  add_data_options(cal, o.data);
  cal->add_option("--model", o.model, "Model file")->required();
  cal->add_option("--calib-batches", o.calib_batches, "Calibration batches")->capture_default_str()->check(CLI::PositiveNumber);
  cal->add_option("--batch", o.batch, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  cal->add_option("--bins", o.bins, "Histogram bins")->capture_default_str()->check(CLI::Range(16, 1 << 20));

  auto* q = c->quantize = app.add_subcommand("quantize", "Apply the precision policy; writes quantized.embm and the precision report");
  q->add_option("--model", o.model, "Model file")->required();
  q->add_option("--stats", o.stats, "Statistics from `calibrate`")->required();
  q->add_option("--policy", o.policy, "Policy file (default: residual adds int8, rest fp16)");

  auto* e = c->eval = app.add_subcommand("eval", "Score a model on a split; writes eval.json");
  add_data_options(e, o.data);
  e->add_option("--model", o.model, "Model file")->required();
  e->add_option("--split", o.split, "Split to score")->capture_default_str()->check(CLI::IsMember({"train", "val", "test", "all"}));
  e->add_flag("--augment-test", o.augment_test, "Append one augmented copy of every scored sample");
  e->add_option("--batch", o.batch, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);

  auto* b = c->bench = app.add_subcommand("bench", "Latency/throughput sweep and allocation timeline; writes bench.json, CSV, SVG");
  b->add_option("--model", o.model, "Baseline model file")->required();
  b->add_option("--quantized", o.quantized, "Quantized model file to compare against the baseline");
  b->add_option("--batches", o.batches, "Batch sizes to sweep")->capture_default_str()->delimiter(',');
  b->add_option("--warmup", o.warmup, "Discarded warmup iterations per point")->capture_default_str();
  b->add_option("--iters", o.iters, "Measured iterations per point")->capture_default_str()->check(CLI::Range(2, 1 << 20));

  auto* r = c->report = app.add_subcommand("report", "Combine eval/bench outputs into report.md and report.csv");
  r->add_option("--eval", o.evals, "eval.json files, optionally labelled as name=path")->required();
  r->add_option("--bench", o.bench, "bench.json to take FPS from");
  r->add_option("--history", o.history, "history.csv to summarise");
  return c;
}

// ---------------------------------------------------------------------------
// Command implementations

struct Context {
  const Options& o;
  std::ostream& out;
  RunManifest& manifest;
  std::filesystem::path dir;

  std::string path(const std::string& name) const { return (dir / name).string(); }
  void produced(const std::string& p) const { manifest.outputs.push_back(p); }
};

inline Split load_split(const DataOptions& d, std::uint64_t seed, std::size_t size, RunManifest& m) {
  std::vector<Sample> samples;
  if (!d.manifest.empty()) {
    m.inputs.push_back(d.manifest);
    LoadReport rep;
    samples = load_manifest(d.manifest, {d.strict_masks}, &rep);
    if (rep.nonbinary_mask_pixels) std::cerr << "warning: " << rep.nonbinary_mask_pixels << " mask pixels outside {0,255}, binarized at 128\n";
    for (auto& s : samples) s = resize_bilinear(s, size, size);
  } else {
    SynthConfig sc;
    sc.count = d.synthetic;
    sc.size = size;
    sc.seed = seed;
    samples = generate_synthetic(sc);
  }
  return split(std::move(samples), {d.train_frac, d.val_frac, d.test_frac}, seed);
}

inline void print_eval(std::ostream& os, const std::string& label, const EvalResult& r) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-12s loss %.6f  MPA %.4f  pixel-acc %.4f  MIoU %.4f\n", label.c_str(), r.loss, r.mpa, r.pixel_acc, r.miou);
  os << buf;
}

inline void cmd_train(const Context& c) {
  const Options& o = c.o;
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.val_every = o.val_every;
  tc.fractions = {o.data.train_frac, o.data.val_frac, o.data.test_frac};
  tc.seed = o.seed;
  tc.amp = o.amp;
  tc.loss_scale = o.loss_scale;
  tc.dynamic_loss_scale = o.dynamic_scale;
  tc.qat = o.qat;
  tc.activation = *parse_act(o.activation);
  tc.schedule.lr_max = o.lr;
  tc.augment = !o.no_augment;
  tc.validate();

  ModelConfig mc;
  mc.in_h = mc.in_w = o.data.size;
  mc.bottlenecks = o.bottlenecks;
  mc.width_mult = o.width_mult;
  mc.activation = tc.activation;
  mc.seed = o.seed;
  const SegmentationModel model = build_segmentation_model(mc);

  const Split data = load_split(o.data, o.seed, o.data.size, c.manifest);
  c.out << "split: " << data.train.size() << " train / " << data.val.size() << " val / " << data.test.size() << " test\n";
  TrainResult r = train(model, data, tc, [&](const HistoryRow& h) {
    if (h.split == "val") {
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %zu step %zu  val loss %.6f  MPA %.4f  MIoU %.4f\n", h.epoch + 1, h.step, h.loss, h.mpa, h.miou);
      c.out << buf;
    }
  });

  for (const auto& p : save_checkpoint(c.path("checkpoint"), {r.best_model, r.best_lion, r.best_scaler})) c.produced(p);
  for (const auto& p : save_checkpoint(c.path("final"), {r.final_model, r.lion, r.scaler})) c.produced(p);
  write_text_file(c.path("history.csv"), history_csv(r.history));
  c.produced(c.path("history.csv"));
  const nlohmann::json summary{{"steps", r.steps},
                               {"skipped_steps", r.skipped},
                               {"best_step", r.best_step},
                               {"best_val_loss", r.best_val_loss},
                               {"best_val_mpa", r.best_val.mpa},
                               {"best_val_pixel_acc", r.best_val.pixel_acc},
                               {"best_val_miou", r.best_val.miou},
                               {"activation", o.activation},
                               {"history_rows", r.history.size()}};
  write_text_file(c.path("train_summary.json"), summary.dump(2) + "\n");
  c.produced(c.path("train_summary.json"));
  c.out << "best checkpoint: step " << r.best_step << ", val loss " << r.best_val_loss << ", MIoU " << r.best_val.miou << "\n";
}

inline void cmd_calibrate(const Context& c) {
  const Options& o = c.o;
  c.manifest.inputs.push_back(o.model);
  const SegmentationModel frozen = freeze(load_model(o.model));
  const Split data = load_split(o.data, o.seed, frozen.config.in_h, c.manifest);
  if (data.train.empty()) throw Error(Errc::empty_calibration_set, "training split is empty");
  std::vector<Tensor> batches;
  for (std::size_t b = 0; b < data.train.size() && batches.size() < o.calib_batches; b += o.batch)
    batches.push_back(make_batch(std::span(data.train).subspan(b, std::min(o.batch, data.train.size() - b))).first);
  const StatsMap stats = collect_stats(frozen.graph, batches, o.calib_batches, o.bins);
  write_text_file(c.path("stats.json"), stats_to_json(stats).dump() + "\n");
  c.produced(c.path("stats.json"));
  c.out << "calibrated " << stats.size() << " tensors over " << batches.size() << " batches (requested " << o.calib_batches << ")\n";
  for (const auto& [name, s] : stats)
    if (s.sqnr_db < 20.0) c.out << "  low SQNR " << name << ": " << s.sqnr_db << " dB\n";
}

inline void cmd_quantize(const Context& c) {
  const Options& o = c.o;
  c.manifest.inputs.push_back(o.model);
  c.manifest.inputs.push_back(o.stats);
  QuantPolicy policy;
  if (!o.policy.empty()) {
    c.manifest.inputs.push_back(o.policy);
    policy = parse_policy(read_text_file(o.policy));
  } else {
    policy = parse_policy(default_policy_text());
  }
  StatsMap stats;
  try {
    stats = stats_from_json(nlohmann::json::parse(read_text_file(o.stats)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::corrupt_file, std::string("statistics file: ") + e.what());
  }
  const SegmentationModel frozen = freeze(load_model(o.model));
  PtqResult r = apply_ptq(frozen.graph, policy, stats);
  save_model(c.path("quantized.embm"), {frozen.config, r.graph});
  write_text_file(c.path("precision_report.json"), r.report.to_json().dump(2) + "\n");
  write_text_file(c.path("precision_report.txt"), r.report.to_table());
  for (const char* n : {"quantized.embm", "precision_report.json", "precision_report.txt"}) c.produced(c.path(n));
  c.out << r.report.to_table();
  char buf[96];
  std::snprintf(buf, sizeof buf, "size ratio %.4f\n", r.report.size_ratio());
  c.out << buf;
}

inline void cmd_eval(const Context& c) {
  const Options& o = c.o;
  c.manifest.inputs.push_back(o.model);
  c.manifest.deterministic = false;  // fps is wall-clock
  const SegmentationModel m = load_model(o.model);
  Split data = load_split(o.data, o.seed, m.config.in_h, c.manifest);
  std::vector<Sample> scored;
  if (o.split == "train" || o.split == "all") scored.insert(scored.end(), data.train.begin(), data.train.end());
  if (o.split == "val" || o.split == "all") scored.insert(scored.end(), data.val.begin(), data.val.end());
  if (o.split == "test" || o.split == "all") scored.insert(scored.end(), data.test.begin(), data.test.end());
  if (scored.empty()) throw Error(Errc::empty_split, "split '" + o.split + "' is empty");
  if (o.augment_test) append_augmented_copies(scored, o.seed);
  const auto t0 = std::chrono::steady_clock::now();
  const EvalResult r = evaluate(m.graph, scored, o.batch);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double f = fps(scored.size(), std::max(secs, 1e-9));
  print_eval(c.out, o.split, r);
  c.out << "images " << scored.size() << "  fps " << f << "\n";
  const nlohmann::json j{{"model", o.model},        {"split", o.split},       {"images", scored.size()}, {"loss", r.loss},
                         {"mpa", r.mpa},            {"pixel_acc", r.pixel_acc}, {"miou", r.miou},        {"fps", f},
                         {"confusion", r.cm.counts()}, {"augmented", o.augment_test}};
  write_text_file(c.path("eval.json"), j.dump(2) + "\n");
  c.produced(c.path("eval.json"));
}

inline void cmd_bench(const Context& c) {
  const Options& o = c.o;
  c.manifest.deterministic = false;
  c.manifest.inputs.push_back(o.model);
  const SegmentationModel base = freeze(load_model(o.model));
  std::optional<SegmentationModel> quant;
  if (!o.quantized.empty()) {
    c.manifest.inputs.push_back(o.quantized);
    quant = load_model(o.quantized);
  }
  BenchConfig cfg;
  cfg.batches = o.batches;
  cfg.warmup = o.warmup;
  cfg.iters = o.iters;
  cfg.in_h = base.config.in_h;
  cfg.in_w = base.config.in_w;
  cfg.in_ch = base.config.in_ch;
  cfg.validate();

  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::map<std::size_t, Tensor> inputs;
  for (std::size_t b : cfg.batches) {
    Tensor x(base.input_shape(b));
    for (float& v : x.data()) v = u(rng);
    inputs.emplace(b, std::move(x));
  }
  auto runner = [&](const SegmentationModel& m) { return [&m, &inputs](std::size_t b) { (void)forward(m.graph, inputs.at(b)); }; };
  std::vector<BenchVariant> variants{{"fp32", base.graph.param_bytes(), runner(base)}};
  if (quant) variants.push_back({"quantized", quant->graph.param_bytes(), runner(*quant)});
  BenchReport rep = sweep(variants, cfg);

  AllocTracker tracker;
  {
    TrackingScope scope(tracker);
    (void)forward(base.graph, inputs.at(cfg.batches.front()));
  }
  rep.memory = MemorySummary::from(tracker.timeline());
  for (const auto& p : emit_report(rep, c.dir.string())) c.produced(p);

  for (const auto& v : rep.variants) {
    c.out << v.name << " (" << v.model_bytes << " parameter bytes)\n";
    for (const auto& p : v.points) {
      char buf[200];
      if (p.error)
        std::snprintf(buf, sizeof buf, "  batch %3zu  failed: %s\n", p.batch, p.error->c_str());
      else
        std::snprintf(buf, sizeof buf, "  batch %3zu  mean %8.3f ms  std %7.3f  p50 %8.3f  p99 %8.3f  %9.1f img/s\n", p.batch, p.stats.mean_ms, p.stats.std_ms,
                      p.stats.p50, p.stats.p99, p.stats.throughput);
      c.out << buf;
    }
  }
  if (auto s = rep.speedup("quantized", "fp32")) c.out << "speedup (best throughput) " << *s << "\n";
  c.out << "allocation events " << rep.memory.events << ", peak " << rep.memory.peak_bytes << " B\n";
}

/// Published reference figures shown beside measured rows, never mixed in.
struct ReferenceRow {
  const char* model;
  const char* split;
  double mpa, miou, fps;
};

inline constexpr ReferenceRow kReferenceRows[] = {
    {"Deeplabv3+", "-", 92.09, 86.75, 24},
    {"Xceptiondeeplabv3+", "-", 91.40, 86.49, 62},
    {"Fire Segmentation Method", "-", 92.46, 86.98, 59},
    {"ReLU", "val", 93.4, 86.0, 65.9},
    {"ReLU", "test", 93.6, 85.9, 66.7},
    {"ELU", "val", 93.1, 84.8, 62.4},
    {"ELU", "test", 93.1, 84.3, 62.0},
    {"PReLU", "val", 92.9, 86.3, 64.3},
    {"PReLU", "test", 93.0, 86.0, 65.6},
};

inline constexpr const char* kReferenceLabel = "paper, not reproduced";

inline void cmd_report(const Context& c) {
  const Options& o = c.o;
  struct Row {
    std::string source, model, split;
    double mpa, miou, fps;
  };
  std::vector<Row> rows;
  // best throughput per bench variant; eval rows labelled with a variant name take it
  std::map<std::string, double> bench_fps;
  if (!o.bench.empty()) {
    c.manifest.inputs.push_back(o.bench);
    const BenchReport b = bench_report_from_json(nlohmann::json::parse(read_text_file(o.bench)));
    for (const auto& v : b.variants)
      for (const auto& p : v.points)
        if (!p.error) bench_fps[v.name] = std::max(bench_fps[v.name], p.stats.throughput);
  }
  for (const auto& spec : o.evals) {
    const auto eq = spec.find('=');
    const std::string name = eq == std::string::npos ? std::filesystem::path(spec).parent_path().filename().string() : spec.substr(0, eq);
    const std::string file = eq == std::string::npos ? spec : spec.substr(eq + 1);
    c.manifest.inputs.push_back(file);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(file));
      auto fit = bench_fps.find(name);
      rows.push_back({"measured", name, j.at("split"), 100.0 * j.at("mpa").get<double>(), 100.0 * j.at("miou").get<double>(),
                      fit != bench_fps.end() ? fit->second : j.at("fps").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::corrupt_file, file + ": " + e.what());
    }
  }
  for (const auto& r : kReferenceRows) rows.push_back({kReferenceLabel, r.model, r.split, r.mpa, r.miou, r.fps});

  std::ostringstream md, csv;
  md << "# ember report\n\n| source | model | split | MPA (%) | MIoU (%) | FPS |\n|---|---|---|---|---|---|\n";
  csv << "source,model,split,mpa_pct,miou_pct,fps\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "| %s | %s | %s | %.2f | %.2f | %.1f |\n", r.source.c_str(), r.model.c_str(), r.split.c_str(), r.mpa, r.miou, r.fps);
    md << buf;
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%.4f,%.4f,%.3f\n", r.source.c_str(), r.model.c_str(), r.split.c_str(), r.mpa, r.miou, r.fps);
    csv << buf;
  }
  md << "\nRows tagged \"" << kReferenceLabel << "\" are published embedded-GPU figures kept for context; measured FPS comes from this machine.\n";
  if (!o.history.empty()) {
    c.manifest.inputs.push_back(o.history);
    const auto hist = parse_history_csv(read_text_file(o.history));
    const HistoryRow* best = nullptr;
    for (const auto& h : hist)
      if (h.split == "val" && (!best || h.loss < best->loss)) best = &h;
    if (best) {
      std::snprintf(buf, sizeof buf, "\nBest validation row: step %zu, loss %.6f, MPA %.4f, MIoU %.4f (%zu history rows).\n", best->step, best->loss, best->mpa,
                    best->miou, hist.size());
      md << buf;
    }
  }
  write_text_file(c.path("report.md"), md.str());
  write_text_file(c.path("report.csv"), csv.str());
  c.produced(c.path("report.md"));
  c.produced(c.path("report.csv"));
  c.out << md.str();
}

// ---------------------------------------------------------------------------
// Entry point

inline bool is_config_error(Errc e) {
  switch (e) {
    case Errc::invalid_config:
    case Errc::invalid_argument:
    case Errc::missing_stats:
    case Errc::unknown_layer:
    case Errc::fraction_sum:
      return true;
    default:
      return false;
  }
}

/// Parses and runs one command. Exit codes: 0 ok, 2 configuration error,
/// 3 runtime failure.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  auto c = make_app();
  try {
    c->app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = c->app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  CLI::App* sub = c->app.get_subcommands().front();
  RunManifest m;
  m.command = sub->get_name();
  for (int i = 0; i < argc; ++i) m.argv.emplace_back(argv[i]);
  {
    // keep global keys and the active subcommand's keys
    std::istringstream all(c->app.config_to_str(true, false));
    std::string line;
    while (std::getline(all, line)) {
      const auto eq = line.find('='), dot = line.find('.');
      if (dot == std::string::npos || dot > eq || line.compare(0, dot + 1, m.command + ".") == 0) m.config += line + "\n";
    }
  }
  m.seed = c->o.seed;
  m.started = utc_now();
  try {
    std::filesystem::create_directories(c->o.out);
    const Context ctx{c->o, out, m, c->o.out};
    if (sub == c->train) cmd_train(ctx);
    else if (sub == c->calibrate) cmd_calibrate(ctx);
    else if (sub == c->quantize) cmd_quantize(ctx);
    else if (sub == c->eval) cmd_eval(ctx);
    else if (sub == c->bench) cmd_bench(ctx);
    else cmd_report(ctx);
    m.finished = utc_now();
    write_text_file((std::filesystem::path(c->o.out) / "manifest.json").string(), m.to_json().dump(2) + "\n");
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return is_config_error(e.code()) ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace ember::cli
