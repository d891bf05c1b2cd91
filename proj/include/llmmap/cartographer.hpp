#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "llmmap/common.hpp"
#include "llmmap/stats.hpp"

namespace llmmap::map {

using Series = std::vector<std::optional<double>>;

/// Truncated (radius ceil(3 sigma)) Gaussian smoothing, renormalized over the valid cells
/// inside the kernel. Missing cells stay missing.
Series gaussian_smooth(const Series& series, double sigma = 1.0);
std::vector<double> gaussian_smooth(const std::vector<double>& series, double sigma = 1.0);

inline constexpr const char* kFlagNoRise = "no_rise";

struct LayerInterval {
  int start = 0;
  int end = 0;  // inclusive
  SeriesKind source = SeriesKind::umap_silhouette;
  Concept category = Concept::age;
  double strength = 0;
  std::vector<std::string> flags;

  bool operator==(const LayerInterval&) const = default;
};

/// Window [i, i+window-1] maximizing the mean of the forward differences x[j+1] - x[j]
/// for j in the window, i.e. (x[i+window] - x[i]) / window. Windows touching a missing cell
/// are skipped; ties go to the smallest i. Non-positive strength is flagged "no_rise".
LayerInterval rising_window_interval(const Series& series, int window = 3);

/// Maximal runs strictly above the p-th percentile of the valid cells, at least min_len
/// long; the max_n runs with the highest mean are returned ordered by start.
std::vector<LayerInterval> percentile_intervals(const Series& series, double p = 75.0, int min_len = 2,
                                                int max_n = 3);

struct MapParams {
  double sigma = 1.0;
  int window = 3;
  double percentile = 75.0;
  int min_len = 2;
  int max_n = 3;

  bool operator==(const MapParams&) const = default;
};

struct MapRow {
  Concept category = Concept::age;
  SeriesKind source = SeriesKind::umap_silhouette;
  std::string rule;  // "rising_window" or "percentile"
  std::vector<LayerInterval> intervals;

  bool operator==(const MapRow&) const = default;
};

struct LLMMap {
  std::string model_name;
  int n_layers = 0;
  MapParams params;
  std::vector<MapRow> rows;          // ordered by concept, then analysis
  std::vector<MapRow> alternatives;  // reported but not drawn (e.g. age anisotropy level)
  std::vector<std::string> warnings;

  bool operator==(const LLMMap&) const = default;
};

/// Smooths each series and applies the row rules. Only the primary series (empty variant)
/// of each (analysis, concept) is used.
LLMMap assemble_map(const std::vector<stats::MetricSeries>& series, const std::string& model_name, int n_layers,
                    const MapParams& params = {});

nlohmann::json to_json(const LLMMap& m);
LLMMap map_from_json(const nlohmann::json& j);

/// format: "svg" or "json".
std::string render_map(const LLMMap& m, const std::string& format);

}  // namespace llmmap::map
