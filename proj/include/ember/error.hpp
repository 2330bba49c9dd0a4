#pragma once

#include <stdexcept>
#include <string>

namespace ember {

enum class Errc {
  invalid_argument,
  shape_mismatch,
  invalid_groups,
  missing_params,
  slope_length_mismatch,
  residual_shape_mismatch,
  tap_missing,
  corrupt_file,
  version_mismatch,
  io_failure,
  empty_calibration_set,
  missing_stats,
  unknown_layer,
  nonfinite_grad,
  empty_split,
  label_out_of_range,
  empty_cm,
  undefined_metric,
  zero_duration,
  double_free,
  malformed_header,
  dimension_mismatch,
  fraction_sum,
  invalid_config,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::invalid_groups: return "invalid-groups";
    case Errc::missing_params: return "missing-params";
    case Errc::slope_length_mismatch: return "slope-length-mismatch";
    case Errc::residual_shape_mismatch: return "residual-shape-mismatch";
    case Errc::tap_missing: return "tap-missing";
    case Errc::corrupt_file: return "corrupt-file";
    case Errc::version_mismatch: return "version-mismatch";
    case Errc::io_failure: return "io-failure";
    case Errc::empty_calibration_set: return "empty-calibration-set";
    case Errc::missing_stats: return "missing-stats";
    case Errc::unknown_layer: return "unknown-layer";
    case Errc::nonfinite_grad: return "nonfinite-grad";
    case Errc::empty_split: return "empty-split";
    case Errc::label_out_of_range: return "label-out-of-range";
    case Errc::empty_cm: return "empty-cm";
    case Errc::undefined_metric: return "undefined-metric";
    case Errc::zero_duration: return "zero-duration";
    case Errc::double_free: return "double-free";
    case Errc::malformed_header: return "malformed-header";
    case Errc::dimension_mismatch: return "dimension-mismatch";
    case Errc::fraction_sum: return "fraction-sum";
    case Errc::invalid_config: return "invalid-config";
  }
  return "unknown";
}

/// Every failure in the library is reported through this exception; `code()`
/// identifies the contract that was violated.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace ember
