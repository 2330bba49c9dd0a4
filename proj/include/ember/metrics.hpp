#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ember/error.hpp"
#include "ember/tensor.hpp"

namespace ember {

/// K x K pixel counts; rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 2) : k_(classes), counts_(classes * classes, 0) {}

  static ConfusionMatrix from_counts(std::size_t classes, std::vector<std::uint64_t> counts) {
    if (counts.size() != classes * classes) throw Error(Errc::invalid_argument, "confusion matrix needs K*K counts");
    ConfusionMatrix cm(classes);
    cm.counts_ = std::move(counts);
    return cm;
  }

  void update(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
    if (pred.size() != gt.size()) throw Error(Errc::shape_mismatch, "prediction and ground truth sizes differ");
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] >= k_ || gt[i] >= k_) throw Error(Errc::label_out_of_range, "label outside [0, " + std::to_string(k_) + ")");
    }
    for (std::size_t i = 0; i < pred.size(); ++i) ++counts_[gt[i] * k_ + pred[i]];
  }

  void merge(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw Error(Errc::shape_mismatch, "class counts differ");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * k_ + pred]; }
  std::size_t classes() const { return k_; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

/// Mean over classes of TP / (TP + FP + FN); classes with an empty union are
/// left out of the mean.
inline double miou(const ConfusionMatrix& cm) {
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < cm.classes(); ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t uni = row + col - tp;
    if (uni == 0) continue;
    sum += double(tp) / double(uni);
    ++used;
  }
  if (used == 0) throw Error(Errc::undefined_metric, "every class has an empty union");
  return sum / double(used);
}

/// Both readings of pixel accuracy: mean of per-class recall (classes absent
/// from the ground truth skipped) and trace / total.
struct PixelAccuracy {
  double class_mean = 0.0;
  double global = 0.0;
};

inline PixelAccuracy mpa(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw Error(Errc::empty_cm, "no pixels observed");
  PixelAccuracy r;
  std::uint64_t trace = 0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    std::uint64_t row = 0;
    for (std::size_t j = 0; j < cm.classes(); ++j) row += cm.at(c, j);
    trace += cm.at(c, c);
    if (row == 0) continue;
    r.class_mean += double(cm.at(c, c)) / double(row);
    ++used;
  }
  r.class_mean /= double(used);
  r.global = double(trace) / double(total);
  return r;
}

inline double fps(std::size_t images, double seconds) {
  if (!(seconds > 0.0)) throw Error(Errc::zero_duration, "frame rate over a non-positive duration");
  return double(images) / seconds;
}

/// Per-pixel argmax over the channel axis; ties resolve to the lower class.
inline std::vector<std::uint8_t> argmax_mask(const Tensor& logits) {
  const Shape& s = logits.shape();
  std::vector<std::uint8_t> out(s.n * s.plane());
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t j = 0; j < s.plane(); ++j) {
      std::size_t best = 0;
      float bv = logits[logits.index(n, 0, 0, 0) + j];
      for (std::size_t c = 1; c < s.c; ++c) {
        const float v = logits[logits.index(n, c, 0, 0) + j];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      out[n * s.plane() + j] = static_cast<std::uint8_t>(best);
    }
  return out;
}

}  // namespace ember
