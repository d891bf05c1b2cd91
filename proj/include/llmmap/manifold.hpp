#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "llmmap/common.hpp"

namespace llmmap::manifold {

/// Exact Euclidean k-nearest-neighbor graph. Row i lists its k neighbors (self excluded)
/// in ascending distance; equal distances are ordered by point index.
struct NeighborGraph {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::size_t> indices;  // n * k, row-major
  std::vector<double> distances;     // n * k, row-major

  std::size_t index(std::size_t i, std::size_t j) const { return indices[i * k + j]; }
  double distance(std::size_t i, std::size_t j) const { return distances[i * k + j]; }
};

NeighborGraph knn_graph(const PointMatrix& points, std::size_t k, unsigned jobs = 1);

struct UmapParams {
  int n_neighbors = 15;
  double min_dist = 0.1;
  int n_epochs = 500;
  double spread = 1.0;
  double learning_rate = 1.0;
  double repulsion_strength = 1.0;
  int negative_sample_rate = 5;
};

enum class InitMethod { spectral, random };

struct Embedding {
  int dim = 2;
  PointMatrix points;
  std::uint64_t seed = 0;
  UmapParams params;
  InitMethod init = InitMethod::spectral;
  PointMatrix initial;  // layout before optimization
};

/// Curve parameters (a, b) of 1 / (1 + a d^(2b)) fitted to the min_dist/spread target.
struct CurveParams {
  double a = 0;
  double b = 0;
};
CurveParams fit_curve_params(double spread, double min_dist);

/// Fuzzy simplicial set edge list (symmetrized, i != j), sorted by (row, col).
struct FuzzyGraph {
  std::size_t n = 0;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
  std::vector<double> weights;
};

/// Per-point bandwidth search plus fuzzy union of the directed memberships.
FuzzyGraph fuzzy_simplicial_set(const NeighborGraph& graph, std::vector<double>* sigmas = nullptr,
                                std::vector<double>* rhos = nullptr);

/// `context` (e.g. "layer 12") is prefixed to error messages.
Embedding umap_embed(const PointMatrix& points, int dim, const UmapParams& params, std::uint64_t seed,
                     const std::string& context = {});

/// layer -> n x D array, for external plotting.
nlohmann::json embeddings_to_json(const std::vector<Embedding>& per_layer, const std::vector<std::string>& prompt_ids);

}  // namespace llmmap::manifold
