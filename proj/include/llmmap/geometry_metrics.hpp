#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "llmmap/common.hpp"
#include "llmmap/stats.hpp"

namespace llmmap::geometry {

/// Maps string labels to dense integer codes in order of first appearance.
std::vector<int> encode_labels(std::span<const std::string> labels);

/// Full Euclidean distance matrix.
Eigen::MatrixXd pairwise_distances(const PointMatrix& points);

/// Mean silhouette over the points selected by `indices` (a multiset; repeated indices are
/// distinct copies at distance 0). A point whose cluster has no other member scores 0.
double silhouette_from_distances(const Eigen::MatrixXd& dist, std::span<const int> labels,
                                 std::span<const std::size_t> indices);
double silhouette(const PointMatrix& points, std::span<const int> labels);
std::vector<double> silhouette_samples(const PointMatrix& points, std::span<const int> labels);

stats::Interval silhouette_ci(const PointMatrix& points, std::span<const int> labels,
                              const stats::BootstrapOptions& opts);

/// Per-point 1 - lambda2 / lambda1 of the covariance of {x_i} plus its k nearest neighbors.
std::vector<double> local_anisotropy_samples(const PointMatrix& points, std::size_t k = 20);
double local_anisotropy(const PointMatrix& points, std::size_t k = 20);
stats::Interval local_anisotropy_ci(const PointMatrix& points, std::size_t k, const stats::BootstrapOptions& opts);

struct LinearFit {
  double r_squared = 0;
  Eigen::VectorXd coefficients;  // intercept first
  std::vector<double> residuals;
};

/// OLS of age on the embedding coordinates plus an intercept.
LinearFit age_linear_fit(const PointMatrix& embedding, std::span<const double> ages);

struct StageCircularity {
  int csfs = 0;  // closest of stages 3..9 to stage 1
  int csls = 0;  // closest of stages 1..7 to stage 9
};

/// `points` holds one row per stage; `stages[i]` is the stage (1..9) of row i.
StageCircularity stage_circularity(const PointMatrix& points, std::span<const int> stages);

struct CircularitySummary {
  std::map<std::string, StageCircularity> per_disease;
  double csfs_mean = 0, csfs_std = 0;
  double csls_mean = 0, csls_std = 0;
};

/// Mean and population standard deviation across diseases.
CircularitySummary summarize_circularity(std::map<std::string, StageCircularity> per_disease);

struct LabelContrast {
  stats::Interval silhouette_a;
  stats::Interval silhouette_b;
  stats::Interval difference;
};

LabelContrast label_contrast(const PointMatrix& points, std::span<const int> labels_a, std::span<const int> labels_b,
                             const stats::BootstrapOptions& opts);

}  // namespace llmmap::geometry
