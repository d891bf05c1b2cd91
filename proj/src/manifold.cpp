#include "llmmap/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <random>

namespace llmmap::manifold {

namespace {

constexpr const char* kModule = "manifold";
constexpr double kSmoothKTolerance = 1e-5;
constexpr double kMinKDistScale = 1e-3;
constexpr int kBandwidthIterations = 64;
constexpr std::size_t kMaxDenseSpectral = 3000;

std::string with_context(const std::string& context, const std::string& message) {
  return context.empty() ? message : context + ": " + message;
}

double clip(double v) { return std::clamp(v, -4.0, 4.0); }

bool connected(const FuzzyGraph& g) {
  if (g.n == 0) return true;
  std::vector<std::vector<std::size_t>> adj(g.n);
  for (std::size_t e = 0; e < g.rows.size(); ++e)
    if (g.weights[e] > 0.0) adj[g.rows[e]].push_back(g.cols[e]);
  std::vector<char> seen(g.n, 0);
  std::queue<std::size_t> q;
  q.push(0);
  seen[0] = 1;
  std::size_t count = 1;
  while (!q.empty()) {
    const auto u = q.front();
    q.pop();
    for (auto v : adj[u])
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        q.push(v);
      }
  }
  return count == g.n;
}

// Eigenvectors 1..dim of the symmetric normalized Laplacian.
PointMatrix spectral_layout(const FuzzyGraph& g, int dim) {
  const auto n = static_cast<Eigen::Index>(g.n);
  Eigen::VectorXd degree = Eigen::VectorXd::Zero(n);
  for (std::size_t e = 0; e < g.rows.size(); ++e) degree[static_cast<Eigen::Index>(g.rows[e])] += g.weights[e];
  Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(n, n);
  for (std::size_t e = 0; e < g.rows.size(); ++e) {
    const auto i = static_cast<Eigen::Index>(g.rows[e]);
    const auto j = static_cast<Eigen::Index>(g.cols[e]);
    lap(i, j) -= g.weights[e] / std::sqrt(degree[i] * degree[j]);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
  if (solver.info() != Eigen::Success) throw Error(kModule, "spectral initialization did not converge");
  PointMatrix out(n, dim);
  for (int d = 0; d < dim; ++d) out.col(d) = solver.eigenvectors().col(d + 1);
  return out;
}

void rescale_to_box(PointMatrix& emb) {
  for (Eigen::Index d = 0; d < emb.cols(); ++d) {
    const double lo = emb.col(d).minCoeff();
    const double hi = emb.col(d).maxCoeff();
    if (hi - lo > 0.0) emb.col(d) = (10.0 * (emb.col(d).array() - lo) / (hi - lo)).matrix();
  }
}

}  // namespace

NeighborGraph knn_graph(const PointMatrix& points, std::size_t k, unsigned jobs) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k < 1) throw Error(kModule, "k must be at least 1");
  if (k >= n) throw Error(kModule, "k = " + std::to_string(k) + " must be smaller than the point count " + std::to_string(n));
  if (!points.allFinite()) throw Error(kModule, "input points contain NaN or infinite values");

  NeighborGraph g;
  g.n = n;
  g.k = k;
  g.indices.resize(n * k);
  g.distances.resize(n * k);
  parallel_for(n, jobs, [&](std::size_t i) {
    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).norm();
      cand.emplace_back(d, j);
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t j = 0; j < k; ++j) {
      g.distances[i * k + j] = cand[j].first;
      g.indices[i * k + j] = cand[j].second;
    }
  });
  return g;
}

CurveParams fit_curve_params(double spread, double min_dist) {
  constexpr int kSamples = 300;
  std::vector<double> xs(kSamples), ys(kSamples);
  for (int i = 0; i < kSamples; ++i) {
    xs[i] = 3.0 * spread * i / (kSamples - 1);
    ys[i] = xs[i] < min_dist ? 1.0 : std::exp(-(xs[i] - min_dist) / spread);
  }
  auto residuals = [&](double a, double b, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    r.resize(kSamples);
    if (jac) jac->resize(kSamples, 2);
    for (int i = 0; i < kSamples; ++i) {
      const double x = xs[i];
      const double g = x > 0.0 ? std::pow(x, 2.0 * b) : 0.0;
      const double denom = 1.0 + a * g;
      r[i] = 1.0 / denom - ys[i];
      if (jac) {
        (*jac)(i, 0) = -g / (denom * denom);
        (*jac)(i, 1) = x > 0.0 ? -a * g * 2.0 * std::log(x) / (denom * denom) : 0.0;
      }
    }
  };

  // Levenberg-Marquardt from (1, 1).
  double a = 1.0, b = 1.0, lambda = 1e-3;
  Eigen::VectorXd r;
  Eigen::MatrixXd jac;
  residuals(a, b, r, &jac);
  double cost = r.squaredNorm();
  for (int iter = 0; iter < 500; ++iter) {
    const Eigen::Matrix2d jtj = jac.transpose() * jac;
    const Eigen::Vector2d grad = jac.transpose() * r;
    Eigen::Matrix2d damped = jtj;
    damped.diagonal() += lambda * jtj.diagonal();
    const Eigen::Vector2d step = damped.ldlt().solve(-grad);
    Eigen::VectorXd r_new;
    residuals(a + step[0], b + step[1], r_new, nullptr);
    const double cost_new = r_new.squaredNorm();
    if (std::isfinite(cost_new) && cost_new < cost) {
      a += step[0];
      b += step[1];
      const double improvement = cost - cost_new;
      cost = cost_new;
      lambda = std::max(lambda / 10.0, 1e-12);
      residuals(a, b, r, &jac);
      if (improvement < 1e-15 * std::max(1.0, cost) && step.norm() < 1e-12) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
  }
  return {a, b};
}

FuzzyGraph fuzzy_simplicial_set(const NeighborGraph& graph, std::vector<double>* sigmas_out,
                                std::vector<double>* rhos_out) {
  const std::size_t n = graph.n, k = graph.k;
  const double target = std::log2(static_cast<double>(k));
  const double mean_all =
      graph.distances.empty()
          ? 0.0
          : std::accumulate(graph.distances.begin(), graph.distances.end(), 0.0) / static_cast<double>(graph.distances.size());

  std::vector<double> sigmas(n), rhos(n);
  for (std::size_t i = 0; i < n; ++i) {
    double rho = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      if (graph.distance(i, j) > 0.0) {
        rho = graph.distance(i, j);
        break;
      }
    double lo = 0.0, hi = std::numeric_limits<double>::infinity(), mid = 1.0;
    for (int it = 0; it < kBandwidthIterations; ++it) {
      double psum = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const double d = graph.distance(i, j) - rho;
        psum += d > 0.0 ? std::exp(-d / mid) : 1.0;
      }
      if (std::fabs(psum - target) < kSmoothKTolerance) break;
      if (psum > target) {
        hi = mid;
        mid = (lo + hi) / 2.0;
      } else {
        lo = mid;
        mid = std::isinf(hi) ? mid * 2.0 : (lo + hi) / 2.0;
      }
    }
    if (rho > 0.0) {
      double mean_i = 0.0;
      for (std::size_t j = 0; j < k; ++j) mean_i += graph.distance(i, j);
      mean_i /= static_cast<double>(k);
      mid = std::max(mid, kMinKDistScale * mean_i);
    } else {
      mid = std::max(mid, kMinKDistScale * mean_all);
    }
    sigmas[i] = mid;
    rhos[i] = rho;
  }

  std::map<std::pair<std::size_t, std::size_t>, double> directed;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double d = graph.distance(i, j) - rhos[i];
      const double w = (d <= 0.0 || sigmas[i] == 0.0) ? 1.0 : std::exp(-d / sigmas[i]);
      directed[{i, graph.index(i, j)}] = w;
    }

  std::map<std::pair<std::size_t, std::size_t>, double> sym;
  for (const auto& [key, w] : directed) {
    const auto rev = directed.find({key.second, key.first});
    const double wt = rev == directed.end() ? 0.0 : rev->second;
    const double u = w + wt - w * wt;
    sym[key] = u;
    sym[{key.second, key.first}] = u;
  }

  FuzzyGraph out;
  out.n = n;
  for (const auto& [key, w] : sym) {
    out.rows.push_back(key.first);
    out.cols.push_back(key.second);
    out.weights.push_back(w);
  }
  if (sigmas_out) *sigmas_out = std::move(sigmas);
  if (rhos_out) *rhos_out = std::move(rhos);
  return out;
}

Embedding umap_embed(const PointMatrix& points, int dim, const UmapParams& params, std::uint64_t seed,
                     const std::string& context) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (dim < 1) throw Error(kModule, with_context(context, "embedding dimension must be at least 1"));
  if (params.n_neighbors < 2) throw Error(kModule, with_context(context, "n_neighbors must be at least 2"));
  if (params.n_epochs < 0) throw Error(kModule, with_context(context, "n_epochs must be non-negative"));
  const std::size_t min_n = std::max<std::size_t>(static_cast<std::size_t>(params.n_neighbors) + 1, 4);
  if (n < min_n)
    throw Error(kModule, with_context(context, "UMAP needs at least " + std::to_string(min_n) + " points, got " +
                                                   std::to_string(n)));
  if (!points.allFinite()) throw Error(kModule, with_context(context, "input contains non-finite values"));

  std::mt19937_64 rng(seed);
  const auto graph = knn_graph(points, static_cast<std::size_t>(params.n_neighbors));
  FuzzyGraph fuzzy = fuzzy_simplicial_set(graph);

  Embedding result;
  result.dim = dim;
  result.seed = seed;
  result.params = params;

  PointMatrix emb;
  if (connected(fuzzy) && n > static_cast<std::size_t>(dim) + 1 && n <= kMaxDenseSpectral) {
    emb = spectral_layout(fuzzy, dim);
    const double max_abs = emb.cwiseAbs().maxCoeff();
    if (max_abs > 0.0 && std::isfinite(max_abs)) {
      emb *= 10.0 / max_abs;
      std::normal_distribution<double> jitter(0.0, 1e-4);
      for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] += jitter(rng);
      result.init = InitMethod::spectral;
    } else {
      emb.resize(0, 0);
    }
  }
  if (emb.size() == 0) {
    emb.resize(static_cast<Eigen::Index>(n), dim);
    std::uniform_real_distribution<double> uni(-10.0, 10.0);
    for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] = uni(rng);
    result.init = InitMethod::random;
  }
  rescale_to_box(emb);
  result.initial = emb;

  if (params.n_epochs > 0) {
    const double max_w = *std::max_element(fuzzy.weights.begin(), fuzzy.weights.end());
    const double floor_w = max_w / static_cast<double>(params.n_epochs);
    std::vector<std::size_t> head, tail;
    std::vector<double> eps_sample;
    for (std::size_t e = 0; e < fuzzy.weights.size(); ++e) {
      const double w = fuzzy.weights[e];
      if (w < floor_w || w <= 0.0) continue;
      head.push_back(fuzzy.rows[e]);
      tail.push_back(fuzzy.cols[e]);
      eps_sample.push_back(static_cast<double>(params.n_epochs) / (params.n_epochs * w / max_w));
    }
    const CurveParams ab = fit_curve_params(params.spread, params.min_dist);
    const double a = ab.a, b = ab.b;
    const double gamma = params.repulsion_strength;
    const std::size_t n_edges = head.size();
    std::vector<double> eps_negative(n_edges), next_sample(eps_sample), next_negative(n_edges);
    for (std::size_t e = 0; e < n_edges; ++e) {
      eps_negative[e] = eps_sample[e] / params.negative_sample_rate;
      next_negative[e] = eps_negative[e];
    }

    const Eigen::Index D = dim;
    for (int epoch = 0; epoch < params.n_epochs; ++epoch) {
      const double alpha = params.learning_rate * (1.0 - static_cast<double>(epoch) / params.n_epochs);
      for (std::size_t e = 0; e < n_edges; ++e) {
        if (next_sample[e] > epoch) continue;
        const auto j = static_cast<Eigen::Index>(head[e]);
        const auto k = static_cast<Eigen::Index>(tail[e]);
        double d2 = (emb.row(j) - emb.row(k)).squaredNorm();
        double coeff = 0.0;
        if (d2 > 0.0) coeff = -2.0 * a * b * std::pow(d2, b - 1.0) / (a * std::pow(d2, b) + 1.0);
        for (Eigen::Index d = 0; d < D; ++d) {
          const double g = clip(coeff * (emb(j, d) - emb(k, d)));
          emb(j, d) += g * alpha;
          emb(k, d) -= g * alpha;
        }
        next_sample[e] += eps_sample[e];

        const int n_neg = static_cast<int>((epoch - next_negative[e]) / eps_negative[e]);
        for (int p = 0; p < n_neg; ++p) {
          const auto kk = static_cast<Eigen::Index>(rng() % n);
          d2 = (emb.row(j) - emb.row(kk)).squaredNorm();
          if (d2 > 0.0) {
            coeff = 2.0 * gamma * b / ((0.001 + d2) * (a * std::pow(d2, b) + 1.0));
          } else if (j == kk) {
            continue;
          } else {
            coeff = 0.0;
          }
          for (Eigen::Index d = 0; d < D; ++d) {
            const double g = coeff > 0.0 ? clip(coeff * (emb(j, d) - emb(kk, d))) : 0.0;
            emb(j, d) += g * alpha;
          }
        }
        next_negative[e] += n_neg * eps_negative[e];
      }
    }
  }

  if (!emb.allFinite()) throw Error(kModule, with_context(context, "embedding diverged to non-finite coordinates"));
  result.points = std::move(emb);
  return result;
}

nlohmann::json embeddings_to_json(const std::vector<Embedding>& per_layer, const std::vector<std::string>& prompt_ids) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < per_layer.size(); ++l) {
    const auto& e = per_layer[l];
    nlohmann::json pts = nlohmann::json::array();
    for (Eigen::Index i = 0; i < e.points.rows(); ++i) {
      std::vector<double> row(e.points.row(i).data(), e.points.row(i).data() + e.points.cols());
      pts.push_back(row);
    }
    layers.push_back({{"layer", l},
                      {"dim", e.dim},
                      {"seed", e.seed},
                      {"init", e.init == InitMethod::spectral ? "spectral" : "random"},
                      {"n_neighbors", e.params.n_neighbors},
                      {"min_dist", e.params.min_dist},
                      {"n_epochs", e.params.n_epochs},
                      {"points", pts}});
  }
  return {{"prompt_ids", prompt_ids}, {"layers", layers}};
}

}  // namespace llmmap::manifold
