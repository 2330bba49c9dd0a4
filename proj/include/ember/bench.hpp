#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ember/alloc_tracker.hpp"
#include "ember/error.hpp"

namespace ember {

struct BenchConfig {
  std::vector<std::size_t> batches{2, 4, 8, 16, 32};
  std::size_t warmup = 10;
  std::size_t iters = 100;
  std::size_t in_h = 64, in_w = 64, in_ch = 3;

  void validate() const {
    if (batches.empty()) throw Error(Errc::invalid_config, "bench needs at least one batch size");
    for (auto b : batches)
      if (b < 1) throw Error(Errc::invalid_config, "batch sizes must be >= 1");
    if (iters < 2) throw Error(Errc::invalid_config, "bench needs at least 2 measured iterations");
  }

  friend bool operator==(const BenchConfig&, const BenchConfig&) = default;
};

struct LatencyStats {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  double p50 = 0.0;
  double p99 = 0.0;
  double throughput = 0.0;  // images per second

  friend bool operator==(const LatencyStats&, const LatencyStats&) = default;
};

/// Nearest-rank percentile of an ascending sample.
inline double nearest_rank(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return 0.0;
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * double(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

/// Mean, sample standard deviation, p50/p99 of per-iteration times, and
/// throughput = batch * iters / total seconds.
inline LatencyStats latency_stats(const std::vector<double>& ms, std::size_t batch) {
  if (ms.size() < 2) throw Error(Errc::invalid_argument, "latency stats need at least 2 samples");
  LatencyStats s;
  double total = 0.0;
  for (double v : ms) total += v;
  s.mean_ms = total / double(ms.size());
  double var = 0.0;
  for (double v : ms) var += (v - s.mean_ms) * (v - s.mean_ms);
  s.std_ms = std::sqrt(var / double(ms.size() - 1));
  std::vector<double> sorted = ms;
  std::sort(sorted.begin(), sorted.end());
  s.p50 = nearest_rank(sorted, 50.0);
  s.p99 = nearest_rank(sorted, 99.0);
  if (!(total > 0.0)) throw Error(Errc::zero_duration, "measured iterations took no time");
  s.throughput = double(batch) * double(ms.size()) / (total / 1000.0);
  return s;
}

/// Times `infer(batch)` with a monotonic clock after discarding warmup calls.
template <class Infer, class Clock = std::chrono::steady_clock>
LatencyStats run_latency(Infer&& infer, std::size_t batch, std::size_t warmup, std::size_t iters) {
  if (iters < 2) throw Error(Errc::invalid_config, "bench needs at least 2 measured iterations");
  for (std::size_t i = 0; i < warmup; ++i) infer(batch);
  std::vector<double> ms;
  ms.reserve(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = Clock::now();
    infer(batch);
    const auto t1 = Clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return latency_stats(ms, batch);
}

/// Busy-waits `ms` milliseconds; sleep granularity is too coarse for stubs.
inline void spin_for(double ms) {
  const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double, std::milli>(ms);
  while (std::chrono::steady_clock::now() < until) {
  }
}

// ---------------------------------------------------------------------------
// Report

struct BenchPoint {
  std::size_t batch = 0;
  LatencyStats stats;
  std::optional<std::string> error;

  friend bool operator==(const BenchPoint&, const BenchPoint&) = default;
};

struct BenchVariantResult {
  std::string name;
  std::size_t model_bytes = 0;
  std::vector<BenchPoint> points;

  friend bool operator==(const BenchVariantResult&, const BenchVariantResult&) = default;
};

struct MemorySummary {
  std::size_t events = 0;
  std::size_t peak_bytes = 0;
  std::size_t total_allocated_bytes = 0;
  std::size_t retained_bytes = 0;
  double fragmentation_proxy = 0.0;
  std::vector<std::size_t> series_downsampled;

  static MemorySummary from(const AllocTimeline& t, std::size_t points = 256) {
    return {t.event_count(), t.peak_bytes(), t.total_allocated_bytes(), t.active_bytes(), t.fragmentation_proxy(), t.downsampled(points)};
  }

  friend bool operator==(const MemorySummary&, const MemorySummary&) = default;
};

struct BenchReport {
  BenchConfig config;
  std::vector<BenchVariantResult> variants;
  MemorySummary memory;

  /// Best-throughput ratio of variant `quantized` over `baseline`.
  std::optional<double> speedup(const std::string& quantized, const std::string& baseline) const {
    auto best = [&](const std::string& name) -> std::optional<double> {
      for (const auto& v : variants)
        if (v.name == name) {
          double b = 0.0;
          for (const auto& p : v.points)
            if (!p.error) b = std::max(b, p.stats.throughput);
          return b > 0.0 ? std::optional(b) : std::nullopt;
        }
      return std::nullopt;
    };
    const auto q = best(quantized), b = best(baseline);
    if (!q || !b) return std::nullopt;
    return *q / *b;
  }

  friend bool operator==(const BenchReport&, const BenchReport&) = default;
};

struct BenchVariant {
  std::string name;
  std::size_t model_bytes = 0;
  std::function<void(std::size_t batch)> infer;
};

/// One point per (batch, variant); a throwing point is recorded with its
/// message and the sweep continues.
inline BenchReport sweep(const std::vector<BenchVariant>& variants, const BenchConfig& cfg) {
  cfg.validate();
  BenchReport r{cfg, {}, {}};
  for (const auto& v : variants) {
    BenchVariantResult vr{v.name, v.model_bytes, {}};
    for (std::size_t b : cfg.batches) {
      BenchPoint p{b, {}, std::nullopt};
      try {
        p.stats = run_latency(v.infer, b, cfg.warmup, cfg.iters);
      } catch (const std::exception& e) {
        p.error = e.what();
      }
      vr.points.push_back(std::move(p));
    }
    r.variants.push_back(std::move(vr));
  }
  return r;
}

inline nlohmann::json to_json(const BenchReport& r) {
  nlohmann::json j;
  j["config"] = {{"batches", r.config.batches}, {"warmup", r.config.warmup}, {"iters", r.config.iters},
                 {"input", {r.config.in_ch, r.config.in_h, r.config.in_w}}};
  j["variants"] = nlohmann::json::array();
  for (const auto& v : r.variants) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : v.points) {
      nlohmann::json e{{"batch", p.batch}, {"mean_ms", p.stats.mean_ms}, {"std_ms", p.stats.std_ms}, {"p50", p.stats.p50}, {"p99", p.stats.p99},
                       {"throughput", p.stats.throughput}};
      if (p.error) e["error"] = *p.error;
      pts.push_back(std::move(e));
    }
    j["variants"].push_back({{"name", v.name}, {"model_bytes", v.model_bytes}, {"points", std::move(pts)}});
  }
  const auto& m = r.memory;
  j["memory"] = {{"events", m.events}, {"peak_bytes", m.peak_bytes}, {"total_allocated_bytes", m.total_allocated_bytes},
                 {"retained_bytes", m.retained_bytes}, {"fragmentation_proxy", m.fragmentation_proxy}, {"series_downsampled", m.series_downsampled}};
  return j;
}

inline BenchReport bench_report_from_json(const nlohmann::json& j) {
  try {
    BenchReport r;
    const auto& c = j.at("config");
    r.config.batches = c.at("batches").get<std::vector<std::size_t>>();
    r.config.warmup = c.at("warmup");
    r.config.iters = c.at("iters");
    const auto in = c.at("input").get<std::vector<std::size_t>>();
    if (in.size() != 3) throw Error(Errc::corrupt_file, "bench input shape needs 3 entries");
    r.config.in_ch = in[0], r.config.in_h = in[1], r.config.in_w = in[2];
    for (const auto& v : j.at("variants")) {
      BenchVariantResult vr{v.at("name"), v.at("model_bytes"), {}};
      for (const auto& p : v.at("points")) {
        BenchPoint bp{p.at("batch"), {p.at("mean_ms"), p.at("std_ms"), p.at("p50"), p.at("p99"), p.at("throughput")}, std::nullopt};
        if (p.contains("error")) bp.error = p.at("error").get<std::string>();
        vr.points.push_back(std::move(bp));
      }
      r.variants.push_back(std::move(vr));
    }
    const auto& m = j.at("memory");
    r.memory = {m.at("events"), m.at("peak_bytes"), m.at("total_allocated_bytes"), m.at("retained_bytes"), m.at("fragmentation_proxy"),
                m.at("series_downsampled").get<std::vector<std::size_t>>()};
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::corrupt_file, std::string("bench report: ") + e.what());
  }
}

inline std::string to_csv(const BenchReport& r) {
  std::ostringstream os;
  os.precision(9);
  os << "variant,model_bytes,batch,mean_ms,std_ms,p50,p99,throughput,error\n";
  for (const auto& v : r.variants)
    for (const auto& p : v.points)
      os << v.name << ',' << v.model_bytes << ',' << p.batch << ',' << p.stats.mean_ms << ',' << p.stats.std_ms << ',' << p.stats.p50 << ','
         << p.stats.p99 << ',' << p.stats.throughput << ',' << (p.error ? "\"" + *p.error + "\"" : "") << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// SVG line plots

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// 800x480 plot with axes, tick labels and one polyline per series.
inline std::string svg_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel, const std::vector<PlotSeries>& series) {
  constexpr double W = 800, H = 480, L = 80, R = 160, T = 40, B = 60;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = 0.0, y1 = -x0;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ostringstream os;
  char buf[256];
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"480\" viewBox=\"0 0 800 480\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"800\" height=\"480\" fill=\"white\"/>\n";
  os << "<text x=\"400\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
  std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", L, H - B, W - R, H - B);
  os << buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", L, T, L, H - B);
  os << buf;
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%g\" text-anchor=\"middle\">%.4g</text>\n", px(xv), H - B + 18, xv);
    os << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%.1f\" text-anchor=\"end\">%.4g</text>\n", L - 6, py(yv) + 4, yv);
    os << buf;
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 16 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  os << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << (T + H - B) / 2 << ")\">" << ylabel
     << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = colors[k % std::size(colors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (auto [x, y] : series[k].points) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(x), py(y));
      os << buf;
    }
    os << "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" fill=\"%s\">%s</text>\n", W - R + 12, T + 18.0 * double(k + 1), color, series[k].name.c_str());
    os << buf;
  }
  os << "</svg>\n";
  return os.str();
}

inline std::vector<PlotSeries> latency_series(const BenchReport& r, bool throughput) {
  std::vector<PlotSeries> out;
  for (const auto& v : r.variants) {
    PlotSeries s{v.name, {}};
    for (const auto& p : v.points)
      if (!p.error) s.points.emplace_back(double(p.batch), throughput ? p.stats.throughput : p.stats.mean_ms);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<PlotSeries> memory_series(const MemorySummary& m) {
  PlotSeries s{"active bytes", {}};
  for (std::size_t i = 0; i < m.series_downsampled.size(); ++i) s.points.emplace_back(double(i), double(m.series_downsampled[i]));
  return {s};
}

enum class ReportFormat : std::uint8_t { Json = 1, Csv = 2, Svg = 4 };

/// Writes bench.json / bench.csv / {latency,throughput,memory}.svg under
/// `dir` as selected by the `formats` bitmask; returns the written paths.
inline std::vector<std::string> emit_report(const BenchReport& r, const std::string& dir, unsigned formats = 7) {
  std::vector<std::string> written;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  auto put = [&](const std::string& name, const std::string& text) {
    const std::string path = (std::filesystem::path(dir) / name).string();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(Errc::io_failure, "cannot write " + path);
    f << text;
    if (!f) throw Error(Errc::io_failure, "write failed for " + path);
    written.push_back(path);
  };
  if (formats & unsigned(ReportFormat::Json)) put("bench.json", to_json(r).dump(2) + "\n");
  if (formats & unsigned(ReportFormat::Csv)) put("bench.csv", to_csv(r));
  if (formats & unsigned(ReportFormat::Svg)) {
    put("latency.svg", svg_plot("Mean latency vs batch", "batch size", "latency (ms)", latency_series(r, false)));
    put("throughput.svg", svg_plot("Throughput vs batch", "batch size", "images / s", latency_series(r, true)));
    put("memory.svg", svg_plot("Active memory", "event (downsampled)", "bytes", memory_series(r.memory)));
  }
  return written;
}

}  // namespace ember
