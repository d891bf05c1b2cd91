#include "llmmap/stats.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace llmmap::stats {

namespace {

constexpr const char* kModule = "geometry-metrics";

void check_options(std::size_t n, const BootstrapOptions& opts) {
  if (n == 0) throw Error(kModule, "bootstrap needs non-empty data");
  if (opts.n_resamples < 100) throw Error(kModule, "bootstrap needs at least 100 resamples");
  if (!(opts.level > 0.0 && opts.level < 1.0)) throw Error(kModule, "confidence level must be in (0, 1)");
  if (opts.max_retries < 1) throw Error(kModule, "max_retries must be at least 1");
}

// Draws one resample and evaluates every metric on it, redrawing if any metric throws.
std::vector<double> draw_and_eval(std::span<const IndexMetric* const> metrics, std::size_t n,
                                  const BootstrapOptions& opts, int r) {
  std::mt19937_64 rng(derive_seed(opts.seed, static_cast<std::uint64_t>(r)));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> idx(n);
  std::string last_error;
  for (int attempt = 0; attempt < opts.max_retries; ++attempt) {
    for (auto& i : idx) i = pick(rng);
    std::sort(idx.begin(), idx.end());
    try {
      std::vector<double> out;
      out.reserve(metrics.size());
      for (const auto* m : metrics) out.push_back((*m)(idx));
      return out;
    } catch (const std::exception& e) {
      last_error = e.what();
    }
  }
  throw Error(kModule, "bootstrap resample " + std::to_string(r) + " failed after " +
                           std::to_string(opts.max_retries) + " draws: " + last_error);
}

Interval summarize(double point, std::vector<double> values, const BootstrapOptions& opts, std::size_t n) {
  const double tail = (1.0 - opts.level) / 2.0 * 100.0;
  Interval out;
  out.mean = point;
  out.n = n;
  out.ci_low = std::min(percentile(values, tail), point);
  out.ci_high = std::max(percentile(std::move(values), 100.0 - tail), point);
  return out;
}

std::vector<std::size_t> identity(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

Interval bootstrap_ci(const IndexMetric& metric, std::size_t n, const BootstrapOptions& opts) {
  check_options(n, opts);
  const double point = metric(identity(n));
  std::vector<double> values(static_cast<std::size_t>(opts.n_resamples));
  const IndexMetric* ms[] = {&metric};
  for (int r = 0; r < opts.n_resamples; ++r) values[static_cast<std::size_t>(r)] = draw_and_eval(ms, n, opts, r)[0];
  return summarize(point, std::move(values), opts, n);
}

Interval bootstrap_mean(std::span<const double> values, const BootstrapOptions& opts) {
  // Sorting the resampled indices fixes the summation order for a given multiset.
  return bootstrap_ci(
      [values](std::span<const std::size_t> idx) {
        double s = 0.0;
        for (auto i : idx) s += values[i];
        return s / static_cast<double>(idx.size());
      },
      values.size(), opts);
}

PairedInterval bootstrap_paired(const IndexMetric& metric_a, const IndexMetric& metric_b, std::size_t n,
                                const BootstrapOptions& opts) {
  check_options(n, opts);
  const auto all = identity(n);
  const double pa = metric_a(all), pb = metric_b(all);
  const auto count = static_cast<std::size_t>(opts.n_resamples);
  std::vector<double> va(count), vb(count), vd(count);
  const IndexMetric* ms[] = {&metric_a, &metric_b};
  for (std::size_t r = 0; r < count; ++r) {
    const auto v = draw_and_eval(ms, n, opts, static_cast<int>(r));
    va[r] = v[0];
    vb[r] = v[1];
    vd[r] = v[0] - v[1];
  }
  return {summarize(pa, std::move(va), opts, n), summarize(pb, std::move(vb), opts, n),
          summarize(pa - pb, std::move(vd), opts, n)};
}

std::vector<std::optional<double>> MetricSeries::means() const {
  std::vector<std::optional<double>> out;
  out.reserve(per_layer.size());
  for (const auto& c : per_layer) out.push_back(c ? std::optional<double>(c->mean) : std::nullopt);
  return out;
}

nlohmann::json to_json(const MetricSeries& s) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& c : s.per_layer) {
    if (!c) {
      layers.push_back(nullptr);
      continue;
    }
    layers.push_back({{"mean", c->mean}, {"ci_low", c->ci_low}, {"ci_high", c->ci_high}, {"n", c->n}});
  }
  return {{"schema", "llmmap.series/1"},
          {"analysis", to_string(s.analysis)},
          {"concept", to_string(s.category)},
          {"variant", s.variant},
          {"per_layer", layers}};
}

MetricSeries series_from_json(const nlohmann::json& j) {
  MetricSeries s;
  try {
    s.analysis = parse_series_kind(j.at("analysis").get<std::string>());
    s.category = parse_concept(j.at("concept").get<std::string>());
    s.variant = j.value("variant", std::string{});
    for (const auto& c : j.at("per_layer")) {
      if (c.is_null()) {
        s.per_layer.emplace_back();
        continue;
      }
      s.per_layer.push_back(LayerStat{c.at("mean").get<double>(), c.at("ci_low").get<double>(),
                                      c.at("ci_high").get<double>(), c.at("n").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("cartographer", std::string("malformed metric series: ") + e.what());
  }
  return s;
}

}  // namespace llmmap::stats
