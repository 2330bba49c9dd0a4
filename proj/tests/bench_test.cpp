#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <regex>

#include "ember/bench.hpp"
#include "ember/executor.hpp"
#include "ember/model.hpp"
#include "oracles.hpp"

using namespace ember;

namespace {

std::vector<oracle::ScriptEvent> random_script(std::mt19937_64& rng, std::size_t n) {
  std::vector<oracle::ScriptEvent> s;
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < n; ++i) {
    if (live.empty() || rng() % 3 != 0) {
      live.push_back(s.size());
      s.push_back({true, 1 + rng() % 4096, 0});
    } else {
      const std::size_t k = rng() % live.size();
      s.push_back({false, 0, live[k]});
      live.erase(live.begin() + std::ptrdiff_t(k));
    }
  }
  return s;
}

BenchReport sample_report() {
  BenchReport r;
  r.config.batches = {2, 4};
  r.config.iters = 5;
  r.variants.push_back({"fp32", 1000, {{2, {1.5, 0.1, 1.4, 1.9, 1333.3}, std::nullopt}, {4, {2.5, 0.2, 2.4, 3.1, 1600.0}, std::nullopt}}});
  r.variants.push_back({"quantized", 500, {{2, {1.0, 0.1, 1.0, 1.2, 2000.0}, std::nullopt}, {4, {}, std::string("out of memory")}}});
  r.memory = {6, 300, 400, 0, 0.75, {100, 300, 200, 0}};
  return r;
}

std::size_t count(const std::string& text, const std::string& what) {
  std::size_t n = 0;
  for (auto p = text.find(what); p != std::string::npos; p = text.find(what, p + 1)) ++n;
  return n;
}

std::size_t tracked_events(const std::function<void()>& fn) {
  AllocTracker tr;
  {
    TrackingScope scope(tr);
    fn();
  }
  return tr.timeline().event_count();
}

}  // namespace

// ---------------------------------------------------------------------------
// Latency statistics

TEST(Latency, StubModelMeanMatchesProgrammedDelay) {
  for (double delay : {2.0, 5.0}) {
    const auto s = run_latency([&](std::size_t) { spin_for(delay); }, 4, 2, 20);
    EXPECT_NEAR(s.mean_ms, delay, 0.1 * delay);
    EXPECT_LE(s.p50, s.p99);
    EXPECT_NEAR(s.throughput * s.mean_ms, 4 * 1000.0, 1e-6 * s.throughput * s.mean_ms);
  }
}

TEST(Latency, ConstantSamples) {
  const auto s = latency_stats({3.0, 3.0, 3.0, 3.0}, 8);
  EXPECT_DOUBLE_EQ(s.mean_ms, 3.0);
  EXPECT_DOUBLE_EQ(s.std_ms, 0.0);
  EXPECT_DOUBLE_EQ(s.p50, 3.0);
  EXPECT_DOUBLE_EQ(s.p99, 3.0);
  EXPECT_DOUBLE_EQ(s.throughput, 8 * 1000.0 / 3.0);
}

TEST(Latency, NearestRankAndSampleStd) {
  std::vector<double> ms;
  for (int i = 1; i <= 100; ++i) ms.push_back(i);
  const auto s = latency_stats(ms, 1);
  EXPECT_DOUBLE_EQ(s.p50, 50.0);
  EXPECT_DOUBLE_EQ(s.p99, 99.0);
  EXPECT_NEAR(s.std_ms, std::sqrt(100.0 * 101.0 / 12.0), 1e-9);
  EXPECT_THROW(latency_stats({1.0}, 1), Error);
  EXPECT_THROW(latency_stats({0.0, 0.0}, 1), Error);
}

TEST(Sweep, FailingPointIsRecordedAndSweepContinues) {
  BenchConfig cfg;
  cfg.batches = {1, 2, 3};
  cfg.warmup = 0;
  cfg.iters = 2;
  const auto r = sweep({{"stub", 10, [](std::size_t b) {
                           if (b == 2) throw std::runtime_error("batch 2 unsupported");
                           spin_for(0.1);
                         }}},
                       cfg);
  ASSERT_EQ(r.variants.size(), 1u);
  ASSERT_EQ(r.variants[0].points.size(), 3u);
  EXPECT_FALSE(r.variants[0].points[0].error);
  EXPECT_EQ(r.variants[0].points[1].error.value_or(""), "batch 2 unsupported");
  EXPECT_GT(r.variants[0].points[2].stats.throughput, 0.0);
  cfg.iters = 1;
  EXPECT_THROW(sweep({}, cfg), Error);
}

TEST(Report, SpeedupUsesBestThroughput) {
  const auto r = sample_report();
  EXPECT_NEAR(*r.speedup("quantized", "fp32"), 2000.0 / 1600.0, 1e-12);
  EXPECT_FALSE(r.speedup("missing", "fp32"));
}

TEST(Report, JsonRoundTrip) {
  const auto r = sample_report();
  EXPECT_EQ(bench_report_from_json(to_json(r)), r);
  EXPECT_EQ(bench_report_from_json(nlohmann::json::parse(to_json(r).dump())), r);
  EXPECT_THROW(bench_report_from_json(nlohmann::json{{"config", 1}}), Error);
}

TEST(Report, CsvHasOneRowPerPoint) {
  const auto csv = to_csv(sample_report());
  EXPECT_EQ(count(csv, "\n"), 1u + 4u);
  EXPECT_NE(csv.find("\"out of memory\""), std::string::npos);
}

TEST(Report, SvgHasOnePolylinePerSeries) {
  const auto r = sample_report();
  const auto svg = svg_plot("t", "x", "y", latency_series(r, false));
  EXPECT_EQ(count(svg, "<polyline"), 2u);
  EXPECT_EQ(svg.rfind("</svg>\n"), svg.size() - 7);
  // the failed point is left out of its series
  const std::regex pts("points=\"([^\"]*)\"");
  std::vector<std::size_t> per_line;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), pts); it != std::sregex_iterator(); ++it) per_line.push_back(count((*it)[1], ","));
  EXPECT_EQ(per_line, (std::vector<std::size_t>{2, 1}));
  EXPECT_EQ(count(svg_plot("empty", "x", "y", {}), "<polyline"), 0u);
}

TEST(Report, EmitWritesSelectedFormats) {
  const auto dir = (std::filesystem::temp_directory_path() / ("ember_bench_" + std::to_string(::getpid()))).string();
  std::filesystem::remove_all(dir);
  EXPECT_EQ(emit_report(sample_report(), dir).size(), 5u);
  for (const char* f : {"bench.json", "bench.csv", "latency.svg", "throughput.svg", "memory.svg"}) EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(dir) / f));
  EXPECT_EQ(emit_report(sample_report(), dir, unsigned(ReportFormat::Csv)).size(), 1u);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Allocation tracking

TEST(Tracker, WorkedScript) {
  AllocTracker tr;
  const auto a = tr.on_alloc(100, "a");
  const auto b = tr.on_alloc(200, "b");
  tr.on_free(a);
  const auto c = tr.on_alloc(100, "c");
  tr.on_free(b);
  tr.on_free(c);
  EXPECT_EQ(tr.recorded_series(), (std::vector<std::size_t>{100, 300, 200, 300, 100, 0}));
  const auto t = tr.timeline();
  EXPECT_EQ(t.peak_bytes(), 300u);
  EXPECT_EQ(t.total_allocated_bytes(), 400u);
  EXPECT_EQ(t.active_bytes(), 0u);
  EXPECT_DOUBLE_EQ(t.fragmentation_proxy(), 1.0);
  EXPECT_THROW(tr.on_free(a), Error);
  EXPECT_EQ(tr.double_frees(), 1u);
  EXPECT_EQ(tr.events().size(), 6u);
}

TEST(Tracker, ReplayMatchesOracleOnRandomScripts) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 100; ++t) {
    const auto script = random_script(rng, 10 + rng() % 200);
    AllocTracker tr;
    std::map<std::size_t, std::uint64_t> handle;
    for (std::size_t i = 0; i < script.size(); ++i) {
      if (script[i].alloc)
        handle[i] = tr.on_alloc(script[i].bytes, "x");
      else
        tr.on_free(handle.at(script[i].target));
    }
    const auto want = oracle::replay_series(script);
    ASSERT_EQ(tr.recorded_series(), want) << t;
    const auto tl = tr.timeline();
    ASSERT_EQ(tl.active_series(), want) << t;
    ASSERT_EQ(tl.peak_bytes(), *std::max_element(want.begin(), want.end()));
    ASSERT_EQ(AllocTimeline::replay(tl.events()).active_series(), want);
  }
}

TEST(Tracker, MergeOrdersBySharedSequence) {
  auto seq = std::make_shared<std::atomic<std::uint64_t>>(0);
  AllocTracker a(seq), b(seq);
  const auto x = a.on_alloc(10, "a");
  const auto y = b.on_alloc(20, "b");
  a.on_free(x);
  b.on_free(y);
  const auto m = AllocTimeline::merge({b.timeline(), a.timeline()});
  EXPECT_EQ(m.active_series(), (std::vector<std::size_t>{10, 30, 20, 0}));
}

TEST(Tracker, ReplayRejectsUnmatchedFree) {
  std::vector<AllocEvent> ev{{0, AllocEvent::Kind::Free, 8, "", 5}};
  EXPECT_THROW(AllocTimeline::replay(ev), Error);
}

TEST(Tracker, DownsampleKeepsEnds) {
  std::vector<AllocEvent> ev;
  for (std::uint64_t i = 0; i < 1000; ++i) ev.push_back({i, AllocEvent::Kind::Alloc, 1, "", i + 1});
  const auto d = AllocTimeline::replay(ev).downsampled(256);
  ASSERT_EQ(d.size(), 256u);
  EXPECT_EQ(d.front(), 1u);
  EXPECT_EQ(d.back(), 1000u);
  EXPECT_TRUE(std::is_sorted(d.begin(), d.end()));
}

TEST(Profiler, FrozenGraphNeedsNoMoreEventsThanTraining) {
  for (ActKind act : {ActKind::ReLU, ActKind::ELU, ActKind::PReLU}) {
    ModelConfig cfg;
    cfg.in_h = cfg.in_w = 32;
    cfg.activation = act;
    auto model = build_segmentation_model(cfg);
    const auto frozen = freeze(model);
    const Tensor x(model.input_shape(2), 0.5f);
    const auto train_events = tracked_events([&] { (void)forward_train(model.graph, x); });
    const auto frozen_events = tracked_events([&] { (void)forward(frozen.graph, x); });
    EXPECT_GT(frozen_events, 0u);
    EXPECT_LE(frozen_events, train_events) << act_name(act);
  }
}

TEST(Profiler, TimelineIsDeterministic) {
  const auto frozen = freeze(build_segmentation_model({}));
  const Tensor x(frozen.input_shape(1), 0.25f);
  auto series = [&] {
    AllocTracker tr;
    {
      TrackingScope scope(tr);
      (void)forward(frozen.graph, x);
    }
    return tr.timeline().active_series();
  };
  const auto a = series();
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, series());
}
