#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace mvr {

inline constexpr std::array<double, 5> kDeltaThresholds{1.05, 1.15, 1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25};

/// Raised when a metric is requested over an empty pixel set.
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct MetricsReport {
  std::array<double, 5> delta{};  // one per kDeltaThresholds entry
  double imae = 0.0;
  double irmse = 0.0;
  std::uint64_t n_pixels = 0;  // pixels with a valid label
  std::uint64_t n_ratio_pixels = 0;  // label and prediction both positive

  nlohmann::json to_json() const;
};

/// Global pixel pooling: sums and counts accumulate across every added plane.
class MetricsAccumulator {
 public:
  /// `valid` restricts the label set further; empty means every pixel with d_hq > 0.
  void add(std::span<const float> d_star, std::span<const float> d_hq, std::span<const std::uint8_t> valid = {});
  void merge(const MetricsAccumulator& other);
  MetricsReport report() const;

 private:
  std::array<std::uint64_t, 5> hits_{};
  std::uint64_t ratio_count_ = 0;
  std::uint64_t count_ = 0;
  double abs_sum_ = 0.0;
  double sq_sum_ = 0.0;
};

double thresholded_accuracy(std::span<const float> d_star, std::span<const float> d_hq,
                            std::span<const std::uint8_t> valid, double thr);
double imae(std::span<const float> d_star, std::span<const float> d_hq, std::span<const std::uint8_t> valid);
double irmse(std::span<const float> d_star, std::span<const float> d_hq, std::span<const std::uint8_t> valid);

/// Unrefined input next to the refined output.
struct EvalReport {
  MetricsReport input;
  MetricsReport refined;

  nlohmann::json to_json() const;
  /// Header plus one row per mode.
  std::string to_table() const;
};

}  // namespace mvr
