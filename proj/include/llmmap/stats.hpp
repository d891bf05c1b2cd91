#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "llmmap/common.hpp"

namespace llmmap::stats {

struct Interval {
  double mean = 0;
  double ci_low = 0;
  double ci_high = 0;
  std::size_t n = 0;

  bool operator==(const Interval&) const = default;
};

struct BootstrapOptions {
  int n_resamples = 1000;
  std::uint64_t seed = 0;
  double level = 0.95;
  /// Fresh draws allowed per resample when the metric throws on a draw.
  int max_retries = 20;
};

/// Metric over a multiset of row indices into the caller's data.
using IndexMetric = std::function<double(std::span<const std::size_t>)>;

/// Percentile bootstrap. `mean` is the metric on the full data; the interval is widened
/// to contain it when the resample distribution is skewed away from the point estimate.
/// Resample r draws from derive_seed(seed, r), so results do not depend on threading.
Interval bootstrap_ci(const IndexMetric& metric, std::size_t n, const BootstrapOptions& opts);

/// Bootstrap of the sample mean.
Interval bootstrap_mean(std::span<const double> values, const BootstrapOptions& opts);

/// Paired bootstrap of (metric_a - metric_b) using the same resamples for both.
struct PairedInterval {
  Interval a;
  Interval b;
  Interval difference;
};
PairedInterval bootstrap_paired(const IndexMetric& metric_a, const IndexMetric& metric_b, std::size_t n,
                                const BootstrapOptions& opts);

struct LayerStat {
  double mean = 0;
  double ci_low = 0;
  double ci_high = 0;
  std::size_t n = 0;

  bool operator==(const LayerStat&) const = default;
};

/// One per-layer statistic for an (analysis, concept) pair. Missing cells are nullopt.
struct MetricSeries {
  SeriesKind analysis = SeriesKind::saliency;
  Concept category = Concept::age;
  std::string variant;  // e.g. "specialty", "mlp", "normalized"; empty for the primary series
  std::vector<std::optional<LayerStat>> per_layer;

  std::vector<std::optional<double>> means() const;
  bool operator==(const MetricSeries&) const = default;
};

nlohmann::json to_json(const MetricSeries& s);
MetricSeries series_from_json(const nlohmann::json& j);

}  // namespace llmmap::stats
