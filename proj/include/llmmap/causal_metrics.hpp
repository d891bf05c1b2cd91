#pragma once

#include <optional>
#include <string>
#include <vector>

#include "llmmap/stats.hpp"
#include "llmmap/trace_store.hpp"

namespace llmmap::causal {

inline constexpr double kDefaultEpsilon = 1e-6;
inline constexpr double kSuccessThreshold = 0.5;

struct PatchingEffect {
  std::string pair_id;
  int layer = 0;
  trace::PatchSite site = trace::PatchSite::attention;
  double effect = 0;
  bool success = false;
};

/// (LD_patched - LD_corrupt) / (LD_clean - LD_corrupt), LD = logit(r) - logit(r').
/// Returns nullopt when |LD_clean - LD_corrupt| <= eps.
std::optional<PatchingEffect> patching_effect(const trace::PatchRecord& r, double eps = kDefaultEpsilon);

struct PatchingProfile {
  stats::MetricSeries attention;
  stats::MetricSeries mlp;
  stats::MetricSeries combined;  // both sites pooled per layer; feeds the map
  std::vector<std::optional<double>> success_fraction;                 // combined, per layer
  std::vector<std::optional<double>> success_fraction_attention;
  std::vector<std::optional<double>> success_fraction_mlp;
  std::size_t degenerate = 0;
  std::vector<std::string> degenerate_ids;  // "pair_id@layer/site"
};

/// Aggregates per (layer, site). Records are put in canonical order first, so the input
/// order never affects the result. Cells without a valid record are missing.
PatchingProfile patching_profile(std::vector<trace::PatchRecord> records, int n_layers, Concept category,
                                 const stats::BootstrapOptions& opts, double eps = kDefaultEpsilon);

struct SaliencyProfile {
  stats::MetricSeries mean;
  stats::MetricSeries normalized;  // mean / max over layers
};

SaliencyProfile saliency_profile(std::vector<trace::SaliencyProfileRecord> records, Concept category,
                                 const stats::BootstrapOptions& opts);

/// Per-layer mean judge score over layers in [0, n_layers). Every record must be scored.
stats::MetricSeries lesion_profile(std::vector<trace::LesionRecord> records, int n_layers, Concept category,
                                   const stats::BootstrapOptions& opts);

/// layer x site matrix of mean effects ("layer,attention,mlp"), empty cells for missing.
std::string patching_heatmap_csv(const PatchingProfile& profile);

}  // namespace llmmap::causal
