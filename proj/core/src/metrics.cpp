#include "mvr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace mvr {

namespace {

void check_sizes(std::span<const float> a, std::span<const float> b, std::span<const std::uint8_t> valid) {
  if (a.size() != b.size() || (!valid.empty() && valid.size() != a.size())) {
    throw std::invalid_argument("metrics: plane size mismatch");
  }
}

bool label_valid(std::span<const float> d_hq, std::span<const std::uint8_t> valid, std::size_t i) {
  return d_hq[i] > 0.0f && (valid.empty() || valid[i] != 0);
}

}  // namespace

void MetricsAccumulator::add(std::span<const float> d_star, std::span<const float> d_hq,
                             std::span<const std::uint8_t> valid) {
  check_sizes(d_star, d_hq, valid);
  for (std::size_t i = 0; i < d_star.size(); ++i) {
    if (!label_valid(d_hq, valid, i)) continue;
    const double p = d_star[i];
    const double g = d_hq[i];
    ++count_;
    abs_sum_ += std::abs(p - g);
    sq_sum_ += (p - g) * (p - g);
    if (p > 0.0) {
      ++ratio_count_;
      const double ratio = std::max(g / p, p / g);
      for (std::size_t k = 0; k < kDeltaThresholds.size(); ++k) hits_[k] += ratio < kDeltaThresholds[k];
    }
  }
}

void MetricsAccumulator::merge(const MetricsAccumulator& other) {
  for (std::size_t k = 0; k < hits_.size(); ++k) hits_[k] += other.hits_[k];
  ratio_count_ += other.ratio_count_;
  count_ += other.count_;
  abs_sum_ += other.abs_sum_;
  sq_sum_ += other.sq_sum_;
}

MetricsReport MetricsAccumulator::report() const {
  if (count_ == 0 || ratio_count_ == 0) throw UndefinedMetricError("metrics: no valid pixels");
  MetricsReport r;
  for (std::size_t k = 0; k < hits_.size(); ++k) r.delta[k] = static_cast<double>(hits_[k]) / ratio_count_;
  r.imae = abs_sum_ / count_;
  r.irmse = std::sqrt(sq_sum_ / count_);
  r.n_pixels = count_;
  r.n_ratio_pixels = ratio_count_;
  return r;
}

double thresholded_accuracy(std::span<const float> d_star, std::span<const float> d_hq,
                            std::span<const std::uint8_t> valid, double thr) {
  check_sizes(d_star, d_hq, valid);
  if (!(thr > 1.0)) throw std::invalid_argument("thresholded_accuracy: threshold must exceed 1");
  std::uint64_t n = 0, hits = 0;
  for (std::size_t i = 0; i < d_star.size(); ++i) {
    if (!label_valid(d_hq, valid, i) || !(d_star[i] > 0.0f)) continue;
    const double p = d_star[i], g = d_hq[i];
    ++n;
    hits += std::max(g / p, p / g) < thr;
  }
  if (n == 0) throw UndefinedMetricError("thresholded_accuracy: no valid pixels");
  return static_cast<double>(hits) / n;
}

double imae(std::span<const float> d_star, std::span<const float> d_hq, std::span<const std::uint8_t> valid) {
  check_sizes(d_star, d_hq, valid);
  double s = 0.0;
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < d_star.size(); ++i) {
    if (!label_valid(d_hq, valid, i)) continue;
    s += std::abs(static_cast<double>(d_star[i]) - d_hq[i]);
    ++n;
  }
  if (n == 0) throw UndefinedMetricError("imae: no valid pixels");
  return s / n;
}

double irmse(std::span<const float> d_star, std::span<const float> d_hq, std::span<const std::uint8_t> valid) {
  check_sizes(d_star, d_hq, valid);
  double s = 0.0;
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < d_star.size(); ++i) {
    if (!label_valid(d_hq, valid, i)) continue;
    const double e = static_cast<double>(d_star[i]) - d_hq[i];
    s += e * e;
    ++n;
  }
  if (n == 0) throw UndefinedMetricError("irmse: no valid pixels");
  return std::sqrt(s / n);
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json delta_j = nlohmann::json::object();
  const char* keys[] = {"1.05", "1.15", "1.25", "1.5625", "1.953125"};
  for (std::size_t k = 0; k < delta.size(); ++k) delta_j[keys[k]] = delta[k];
  return {{"delta", delta_j}, {"imae", imae}, {"irmse", irmse}, {"n_pixels", n_pixels},
          {"n_ratio_pixels", n_ratio_pixels}};
}

nlohmann::json EvalReport::to_json() const { return {{"input", input.to_json()}, {"refined", refined.to_json()}}; }

std::string EvalReport::to_table() const {
  std::string out = "mode     d1.05   d1.15   d1.25   d1.56   d1.95   iMAE      iRMSE\n";
  char line[160];
  for (const auto& [name, r] : {std::pair<const char*, const MetricsReport&>{"input", input}, {"refined", refined}}) {
    std::snprintf(line, sizeof line, "%-8s %.4f  %.4f  %.4f  %.4f  %.4f  %.6f  %.6f\n", name, r.delta[0], r.delta[1],
                  r.delta[2], r.delta[3], r.delta[4], r.imae, r.irmse);
    out += line;
  }
  return out;
}

}  // namespace mvr
