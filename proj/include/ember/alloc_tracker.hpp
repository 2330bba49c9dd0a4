#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ember/error.hpp"

namespace ember {

struct AllocEvent {
  enum class Kind : std::uint8_t { Alloc, Free };

  std::uint64_t seq = 0;
  Kind kind = Kind::Alloc;
  std::size_t bytes = 0;
  std::string tag;
  std::uint64_t handle = 0;

  friend bool operator==(const AllocEvent&, const AllocEvent&) = default;
};

/// Ordered allocation history plus the quantities derived from it.
///
/// `active_series()[i]` is the number of live bytes after event i. The
/// fragmentation proxy is peak live bytes over the summed sizes of the
/// distinct buffer sizes requested: a value near 1 means the peak could be
/// served by one buffer per size class (the caching allocator ideal).
class AllocTimeline {
 public:
  AllocTimeline() = default;

  /// Rebuilds every derived series from raw events. Throws double-free when a
  /// free does not match a live allocation.
  static AllocTimeline replay(std::vector<AllocEvent> events) {
    AllocTimeline t;
    std::unordered_map<std::uint64_t, std::size_t> live;
    std::size_t active = 0;
    std::set<std::size_t> sizes;
    t.series_.reserve(events.size());
    for (const auto& e : events) {
      if (e.kind == AllocEvent::Kind::Alloc) {
        live[e.handle] = e.bytes;
        active += e.bytes;
        t.total_bytes_ += e.bytes;
        sizes.insert(e.bytes);
      } else {
        auto it = live.find(e.handle);
        if (it == live.end()) throw Error(Errc::double_free, "free of handle " + std::to_string(e.handle) + " without a live allocation");
        active -= it->second;
        live.erase(it);
      }
      t.series_.push_back(active);
      t.peak_ = std::max(t.peak_, active);
    }
    for (std::size_t s : sizes) t.distinct_size_sum_ += s;
    t.events_ = std::move(events);
    return t;
  }

  /// Combines per-worker timelines that drew sequence numbers from one counter.
  static AllocTimeline merge(const std::vector<AllocTimeline>& parts) {
    std::vector<AllocEvent> all;
    for (const auto& p : parts) all.insert(all.end(), p.events_.begin(), p.events_.end());
    std::stable_sort(all.begin(), all.end(), [](const AllocEvent& a, const AllocEvent& b) { return a.seq < b.seq; });
    return replay(std::move(all));
  }

  const std::vector<AllocEvent>& events() const { return events_; }
  const std::vector<std::size_t>& active_series() const { return series_; }
  std::size_t event_count() const { return events_.size(); }
  std::size_t peak_bytes() const { return peak_; }
  std::size_t total_allocated_bytes() const { return total_bytes_; }
  std::size_t active_bytes() const { return series_.empty() ? 0 : series_.back(); }

  double fragmentation_proxy() const {
    return distinct_size_sum_ == 0 ? 0.0 : double(peak_) / double(distinct_size_sum_);
  }

  /// At most `points` samples of the active series, evenly strided, always
  /// keeping the last value.
  std::vector<std::size_t> downsampled(std::size_t points) const {
    if (series_.size() <= points || points < 2) return series_;
    std::vector<std::size_t> out;
    out.reserve(points);
    for (std::size_t i = 0; i < points; ++i) out.push_back(series_[i * (series_.size() - 1) / (points - 1)]);
    return out;
  }

 private:
  std::vector<AllocEvent> events_;
  std::vector<std::size_t> series_;
  std::size_t peak_ = 0;
  std::size_t total_bytes_ = 0;
  std::size_t distinct_size_sum_ = 0;
};

/// Records allocation events. Sequence numbers come from a counter that can be
/// shared between trackers so per-worker timelines merge into one order.
class AllocTracker {
 public:
  using SeqSource = std::shared_ptr<std::atomic<std::uint64_t>>;

  explicit AllocTracker(SeqSource seq = std::make_shared<std::atomic<std::uint64_t>>(0)) : seq_(std::move(seq)) {}

  AllocTracker(const AllocTracker&) = delete;
  AllocTracker& operator=(const AllocTracker&) = delete;

  std::uint64_t on_alloc(std::size_t bytes, std::string_view tag) {
    std::lock_guard lock(mu_);
    // the sequence number doubles as the handle so merged timelines stay unambiguous
    const std::uint64_t handle = seq_->fetch_add(1);
    live_[handle] = bytes;
    active_ += bytes;
    events_.push_back({handle, AllocEvent::Kind::Alloc, bytes, std::string(tag), handle});
    series_.push_back(active_);
    return handle;
  }

  void on_free(std::uint64_t handle) {
    std::lock_guard lock(mu_);
    auto it = live_.find(handle);
    if (it == live_.end()) {
      ++double_frees_;
      throw Error(Errc::double_free, "handle " + std::to_string(handle) + " is not live");
    }
    active_ -= it->second;
    events_.push_back({seq_->fetch_add(1), AllocEvent::Kind::Free, it->second, {}, handle});
    live_.erase(it);
    series_.push_back(active_);
  }

  // Pointer-keyed hooks used by TrackingAllocator. Frees of pointers this
  // tracker never saw (allocated before tracking began) are ignored.
  void record_pointer_alloc(const void* p, std::size_t bytes, std::string_view tag) noexcept {
    try {
      const std::uint64_t h = on_alloc(bytes, tag);
      std::lock_guard lock(mu_);
      pointers_[p] = h;
    } catch (...) {
    }
  }

  void record_pointer_free(const void* p) noexcept {
    std::uint64_t h = 0;
    {
      std::lock_guard lock(mu_);
      auto it = pointers_.find(p);
      if (it == pointers_.end()) return;
      h = it->second;
      pointers_.erase(it);
    }
    try {
      on_free(h);
    } catch (...) {
    }
  }

  std::vector<AllocEvent> events() const {
    std::lock_guard lock(mu_);
    return events_;
  }

  /// Live-bytes series as recorded while events arrived.
  std::vector<std::size_t> recorded_series() const {
    std::lock_guard lock(mu_);
    return series_;
  }

  std::size_t double_frees() const {
    std::lock_guard lock(mu_);
    return double_frees_;
  }

  AllocTimeline timeline() const { return AllocTimeline::replay(events()); }

 private:
  mutable std::mutex mu_;
  SeqSource seq_;
  std::vector<AllocEvent> events_;
  std::vector<std::size_t> series_;
  std::unordered_map<std::uint64_t, std::size_t> live_;
  std::unordered_map<const void*, std::uint64_t> pointers_;
  std::size_t active_ = 0;
  std::size_t double_frees_ = 0;
};

namespace detail {
inline AllocTracker*& current_tracker() noexcept {
  thread_local AllocTracker* tracker = nullptr;
  return tracker;
}
inline std::string& current_tag() noexcept {
  thread_local std::string tag;
  return tag;
}
}  // namespace detail

/// Routes tensor buffer traffic on this thread to `tracker` while alive.
class TrackingScope {
 public:
  explicit TrackingScope(AllocTracker& tracker) : prev_(detail::current_tracker()) { detail::current_tracker() = &tracker; }
  ~TrackingScope() { detail::current_tracker() = prev_; }
  TrackingScope(const TrackingScope&) = delete;
  TrackingScope& operator=(const TrackingScope&) = delete;

 private:
  AllocTracker* prev_;
};

/// Labels allocations made on this thread (typically with the layer name).
class TagScope {
 public:
  explicit TagScope(std::string_view tag) : prev_(detail::current_tag()) { detail::current_tag() = tag; }
  ~TagScope() { detail::current_tag() = std::move(prev_); }
  TagScope(const TagScope&) = delete;
  TagScope& operator=(const TagScope&) = delete;

 private:
  std::string prev_;
};

template <class T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    T* p = std::allocator<T>{}.allocate(n);
    if (AllocTracker* t = detail::current_tracker()) t->record_pointer_alloc(p, n * sizeof(T), detail::current_tag());
    return p;
  }

  void deallocate(T* p, std::size_t n) noexcept {
    if (AllocTracker* t = detail::current_tracker()) t->record_pointer_free(p);
    std::allocator<T>{}.deallocate(p, n);
  }

  template <class U>
  friend bool operator==(const TrackingAllocator&, const TrackingAllocator<U>&) noexcept {
    return true;
  }
};

}  // namespace ember
