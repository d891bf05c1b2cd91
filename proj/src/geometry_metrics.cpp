#include "llmmap/geometry_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "llmmap/manifold.hpp"

namespace llmmap::geometry {

namespace {

constexpr const char* kModule = "geometry-metrics";

void check_labels(std::size_t n, std::size_t labels) {
  if (n != labels)
    throw Error(kModule, "label count " + std::to_string(labels) + " does not match point count " + std::to_string(n));
}

}  // namespace

std::vector<int> encode_labels(std::span<const std::string> labels) {
  std::map<std::string, int, std::less<>> codes;
  std::vector<int> out;
  out.reserve(labels.size());
  for (const auto& l : labels) {
    const auto [it, inserted] = codes.emplace(l, static_cast<int>(codes.size()));
    out.push_back(it->second);
  }
  return out;
}

Eigen::MatrixXd pairwise_distances(const PointMatrix& points) {
  const auto n = points.rows();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = (points.row(i) - points.row(j)).norm();
      d(i, j) = v;
      d(j, i) = v;
    }
  return d;
}

double silhouette_from_distances(const Eigen::MatrixXd& dist, std::span<const int> labels,
                                 std::span<const std::size_t> indices) {
  const std::size_t m = indices.size();
  if (m < 2) throw Error(kModule, "silhouette needs at least 2 points");

  // Compact cluster slots for the selected points.
  std::map<int, std::size_t> slot_of;
  std::vector<std::size_t> slot(m);
  for (std::size_t p = 0; p < m; ++p) {
    const auto [it, inserted] = slot_of.emplace(labels[indices[p]], slot_of.size());
    slot[p] = it->second;
  }
  const std::size_t n_clusters = slot_of.size();
  if (n_clusters < 2) throw Error(kModule, "silhouette needs at least 2 distinct labels");

  std::vector<std::size_t> counts(n_clusters, 0);
  for (auto s : slot) ++counts[s];

  std::vector<double> sums(n_clusters);
  double total = 0.0;
  for (std::size_t p = 0; p < m; ++p) {
    std::fill(sums.begin(), sums.end(), 0.0);
    const auto ip = static_cast<Eigen::Index>(indices[p]);
    for (std::size_t q = 0; q < m; ++q) {
      if (q == p) continue;
      sums[slot[q]] += dist(ip, static_cast<Eigen::Index>(indices[q]));
    }
    const std::size_t own = slot[p];
    if (counts[own] < 2) continue;  // singleton cluster: s = 0
    const double a = sums[own] / static_cast<double>(counts[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n_clusters; ++c)
      if (c != own) b = std::min(b, sums[c] / static_cast<double>(counts[c]));
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(m);
}

double silhouette(const PointMatrix& points, std::span<const int> labels) {
  check_labels(static_cast<std::size_t>(points.rows()), labels.size());
  if (!points.allFinite()) throw Error(kModule, "silhouette input contains non-finite values");
  std::vector<std::size_t> idx(labels.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return silhouette_from_distances(pairwise_distances(points), labels, idx);
}

std::vector<double> silhouette_samples(const PointMatrix& points, std::span<const int> labels) {
  check_labels(static_cast<std::size_t>(points.rows()), labels.size());
  const auto n = labels.size();
  const auto d = pairwise_distances(points);
  std::vector<double> out(n);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  silhouette_from_distances(d, labels, idx);  // validates labels
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, std::pair<double, std::size_t>> acc;
    for (std::size_t j = 0; j < n; ++j) {
      auto& e = acc[labels[j]];
      if (j != i) e.first += d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      ++e.second;
    }
    const auto& own = acc[labels[i]];
    if (own.second < 2) {
      out[i] = 0.0;
      continue;
    }
    const double a = own.first / static_cast<double>(own.second - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [lab, e] : acc)
      if (lab != labels[i]) b = std::min(b, e.first / static_cast<double>(e.second));
    const double denom = std::max(a, b);
    out[i] = denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return out;
}

stats::Interval silhouette_ci(const PointMatrix& points, std::span<const int> labels,
                              const stats::BootstrapOptions& opts) {
  check_labels(static_cast<std::size_t>(points.rows()), labels.size());
  const auto d = pairwise_distances(points);
  return stats::bootstrap_ci(
      [&](std::span<const std::size_t> idx) { return silhouette_from_distances(d, labels, idx); }, labels.size(),
      opts);
}

std::vector<double> local_anisotropy_samples(const PointMatrix& points, std::size_t k) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (points.cols() != 2) throw Error(kModule, "local anisotropy expects a 2-D embedding");
  if (n <= k) throw Error(kModule, "local anisotropy needs more than k = " + std::to_string(k) + " points");
  const auto graph = manifold::knn_graph(points, k);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Vector2d mean = points.row(static_cast<Eigen::Index>(i)).transpose();
    for (std::size_t j = 0; j < k; ++j) mean += points.row(static_cast<Eigen::Index>(graph.index(i, j))).transpose();
    mean /= static_cast<double>(k + 1);
    double sxx = 0, syy = 0, sxy = 0;
    auto add = [&](std::size_t r) {
      const double dx = points(static_cast<Eigen::Index>(r), 0) - mean[0];
      const double dy = points(static_cast<Eigen::Index>(r), 1) - mean[1];
      sxx += dx * dx;
      syy += dy * dy;
      sxy += dx * dy;
    };
    add(i);
    for (std::size_t j = 0; j < k; ++j) add(graph.index(i, j));
    const double half_trace = (sxx + syy) / 2.0;
    const double disc = std::hypot((sxx - syy) / 2.0, sxy);
    const double l1 = half_trace + disc;
    const double l2 = half_trace - disc;
    out[i] = l1 > 0.0 ? std::clamp(1.0 - l2 / l1, 0.0, 1.0) : 0.0;
  }
  return out;
}

double local_anisotropy(const PointMatrix& points, std::size_t k) {
  const auto a = local_anisotropy_samples(points, k);
  double s = 0.0;
  for (double v : a) s += v;
  return s / static_cast<double>(a.size());
}

stats::Interval local_anisotropy_ci(const PointMatrix& points, std::size_t k, const stats::BootstrapOptions& opts) {
  const auto a = local_anisotropy_samples(points, k);
  return stats::bootstrap_mean(a, opts);
}

LinearFit age_linear_fit(const PointMatrix& embedding, std::span<const double> ages) {
  const auto n = embedding.rows();
  check_labels(static_cast<std::size_t>(n), ages.size());
  if (n < 3) throw Error(kModule, "age fit needs at least 3 points");
  if (std::all_of(ages.begin(), ages.end(), [&](double a) { return a == ages[0]; }))
    throw Error(kModule, "age fit needs ages that are not all equal");

  Eigen::MatrixXd x(n, embedding.cols() + 1);
  x.col(0).setOnes();
  x.rightCols(embedding.cols()) = embedding;
  const Eigen::Map<const Eigen::VectorXd> y(ages.data(), n);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < x.cols()) throw Error(kModule, "age fit design matrix is rank deficient");

  LinearFit fit;
  fit.coefficients = qr.solve(y);
  const Eigen::VectorXd resid = y - x * fit.coefficients;
  const double ss_res = resid.squaredNorm();
  const double ss_tot = (y.array() - y.mean()).matrix().squaredNorm();
  fit.r_squared = 1.0 - ss_res / ss_tot;
  fit.residuals.assign(resid.data(), resid.data() + n);
  return fit;
}

StageCircularity stage_circularity(const PointMatrix& points, std::span<const int> stages) {
  check_labels(static_cast<std::size_t>(points.rows()), stages.size());
  std::map<int, Eigen::Index> row_of;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i] < 1 || stages[i] > 9) throw Error(kModule, "stage " + std::to_string(stages[i]) + " outside 1..9");
    if (!row_of.emplace(stages[i], static_cast<Eigen::Index>(i)).second)
      throw Error(kModule, "stage " + std::to_string(stages[i]) + " appears twice");
  }
  for (int s = 1; s <= 9; ++s)
    if (!row_of.count(s)) throw Error(kModule, "missing stage " + std::to_string(s));

  auto closest = [&](int anchor, int from, int to) {
    int best = from;
    double best_d = std::numeric_limits<double>::infinity();
    for (int s = from; s <= to; ++s) {
      const double d = (points.row(row_of[anchor]) - points.row(row_of[s])).norm();
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
    return best;
  };
  return {closest(1, 3, 9), closest(9, 1, 7)};
}

CircularitySummary summarize_circularity(std::map<std::string, StageCircularity> per_disease) {
  if (per_disease.empty()) throw Error(kModule, "no diseases to summarize");
  CircularitySummary out;
  const auto n = static_cast<double>(per_disease.size());
  for (const auto& [name, c] : per_disease) {
    out.csfs_mean += c.csfs / n;
    out.csls_mean += c.csls / n;
  }
  for (const auto& [name, c] : per_disease) {
    out.csfs_std += (c.csfs - out.csfs_mean) * (c.csfs - out.csfs_mean) / n;
    out.csls_std += (c.csls - out.csls_mean) * (c.csls - out.csls_mean) / n;
  }
  out.csfs_std = std::sqrt(out.csfs_std);
  out.csls_std = std::sqrt(out.csls_std);
  out.per_disease = std::move(per_disease);
  return out;
}

LabelContrast label_contrast(const PointMatrix& points, std::span<const int> labels_a, std::span<const int> labels_b,
                             const stats::BootstrapOptions& opts) {
  check_labels(static_cast<std::size_t>(points.rows()), labels_a.size());
  check_labels(static_cast<std::size_t>(points.rows()), labels_b.size());
  const auto d = pairwise_distances(points);
  const auto r = stats::bootstrap_paired(
      [&](std::span<const std::size_t> idx) { return silhouette_from_distances(d, labels_a, idx); },
      [&](std::span<const std::size_t> idx) { return silhouette_from_distances(d, labels_b, idx); },
      labels_a.size(), opts);
  return {r.a, r.b, r.difference};
}

}  // namespace llmmap::geometry
