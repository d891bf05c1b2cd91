#include <doctest.h>

#include <cmath>
#include <random>

#include "llmmap/cartographer.hpp"

using namespace llmmap;
using namespace llmmap::map;

namespace {

stats::MetricSeries series_of(SeriesKind k, Concept c, const std::vector<double>& means, std::string variant = {}) {
  stats::MetricSeries s;
  s.analysis = k;
  s.category = c;
  s.variant = std::move(variant);
  for (double m : means) s.per_layer.push_back(stats::LayerStat{m, m, m, 5});
  return s;
}

// Bump centered on [lo, hi] over `n` cells.
std::vector<double> plateau(int n, int lo, int hi, double base = 0.0, double top = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(n), base);
  for (int i = lo; i <= hi; ++i) v[static_cast<std::size_t>(i)] = top;
  return v;
}

}  // namespace

TEST_CASE("smoothing keeps constants and normalizes the kernel") {
  const std::vector<double> c(15, 2.75);
  for (double v : gaussian_smooth(c, 1.0)) CHECK(std::fabs(v - 2.75) < 1e-12);
  for (double v : gaussian_smooth(c, 2.3)) CHECK(std::fabs(v - 2.75) < 1e-12);

  std::vector<double> impulse(21, 0.0);
  impulse[10] = 1.0;
  const auto s = gaussian_smooth(impulse, 1.0);
  double z = 0.0;
  for (int k = -3; k <= 3; ++k) z += std::exp(-0.5 * k * k);
  for (int k = -3; k <= 3; ++k) CHECK(std::fabs(s[10 + k] - std::exp(-0.5 * k * k) / z) < 1e-9);
  CHECK(s[6] == 0.0);
  CHECK(s[14] == 0.0);

  std::vector<double> edge{1.0, 0.0, 0.0};
  CHECK(gaussian_smooth(edge, 1.0)[0] == doctest::Approx(1.0 / (1.0 + std::exp(-0.5) + std::exp(-2.0))));
}

TEST_CASE("smoothing skips missing cells") {
  const Series s{1.0, std::nullopt, 3.0, 3.0};
  const auto out = gaussian_smooth(s, 1.0);
  CHECK(!out[1]);
  const double w1 = std::exp(-0.5), w2 = std::exp(-2.0), w3 = std::exp(-4.5);
  CHECK(*out[0] == doctest::Approx((1.0 + 3.0 * w2 + 3.0 * w3) / (1.0 + w2 + w3)));
  CHECK(*out[2] == doctest::Approx((1.0 * w2 + 3.0 + 3.0 * w1) / (w2 + 1.0 + w1)));
  CHECK_THROWS_AS(gaussian_smooth(Series{}, 1.0), Error);
  CHECK_THROWS_AS(gaussian_smooth(Series{std::nullopt}, 1.0), Error);
  CHECK_THROWS_AS(gaussian_smooth(Series{1.0}, 0.0), Error);
}

TEST_CASE("rising window on a step") {
  Series step;
  for (int i = 0; i < 16; ++i) step.push_back(i < 8 ? 0.0 : 1.0);
  const auto iv = rising_window_interval(step, 3);
  CHECK(iv.start == 5);
  CHECK(iv.end == 7);
  CHECK(iv.strength == doctest::Approx(1.0 / 3));
  CHECK(iv.flags.empty());

  Series falling;
  for (int i = 0; i < 10; ++i) falling.push_back(-i);
  const auto f = rising_window_interval(falling, 3);
  CHECK(f.flags == std::vector<std::string>{kFlagNoRise});
  CHECK(f.start == 0);

  Series gap{0.0, 5.0, std::nullopt, 0.0, 1.0, 2.0, 3.0};
  CHECK(rising_window_interval(gap, 3).start == 3);
  CHECK_THROWS_AS(rising_window_interval(Series{1.0, 2.0, 3.0}, 3), Error);
  CHECK_THROWS_AS(rising_window_interval(Series{1.0, std::nullopt, 3.0, 4.0, std::nullopt}, 3), Error);
}

TEST_CASE("percentile intervals on the reference fixture") {
  const Series s{0, 0, 0, 0, 9, 9, 0, 0};
  const auto ivs = percentile_intervals(s, 75, 2, 3);
  REQUIRE(ivs.size() == 1);
  CHECK(ivs[0].start == 4);
  CHECK(ivs[0].end == 5);
  CHECK(ivs[0].strength == 9.0);

  // Short runs are dropped; the top runs by mean come back ordered by start.
  const Series multi{5, 5, 0, 0, 8, 0, 7, 7, 0, 0, 6, 6, 0, 0, 0, 0, 0, 0, 0, 0};
  const auto m = percentile_intervals(multi, 60, 2, 2);
  REQUIRE(m.size() == 2);
  CHECK(m[0].start == 6);
  CHECK(m[1].start == 10);
  CHECK_THROWS_AS(percentile_intervals(Series{1, 2, 3}, 75, 2, 3), Error);

  CHECK(percentile_intervals(Series(10, 4.0), 75, 2, 3).empty());

  // Five separated 2-layer plateaus with distinct heights; oracle keeps the three highest.
  Series five(30, 0.0);
  const double heights[] = {3, 7, 5, 9, 4};
  for (int k = 0; k < 5; ++k) five[3 + 5 * k] = five[4 + 5 * k] = heights[k];
  const auto top = percentile_intervals(five, 60, 2, 3);
  REQUIRE(top.size() == 3);
  CHECK(top[0].start == 8);
  CHECK(top[1].start == 13);
  CHECK(top[2].start == 18);
  for (const auto& iv : top) CHECK(iv.end == iv.start + 1);
}

TEST_CASE("smoothing and window edge cases") {
  CHECK(*gaussian_smooth(Series{3.5}, 1.0)[0] == 3.5);
  std::vector<double> seven(7, 0.0);
  seven[3] = 1.0;
  const auto s = gaussian_smooth(seven, 1.0);
  double z = 0.0;
  for (int k = -3; k <= 3; ++k) z += std::exp(-0.5 * k * k);
  CHECK(std::fabs(s[3] - 1.0 / z) < 1e-9);
  for (int k = 1; k <= 3; ++k) CHECK(s[3 - k] == s[3 + k]);

  Series linear;
  for (int i = 0; i < 10; ++i) linear.push_back(2.0 * i);
  CHECK(rising_window_interval(linear, 3).start == 0);
}

TEST_CASE("interval rules are invariant to positive affine maps") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> scale(0.1, 10.0), shift(-5, 5);
  for (int trial = 0; trial < 100; ++trial) {
    Series s;
    for (int i = 0; i < 25; ++i) s.push_back(g(rng));
    const double a = scale(rng), b = shift(rng);
    Series t;
    for (const auto& v : s) t.push_back(a * *v + b);
    const auto r1 = rising_window_interval(s, 3), r2 = rising_window_interval(t, 3);
    CHECK(r1.start == r2.start);
    const auto p1 = percentile_intervals(s, 75, 2, 3), p2 = percentile_intervals(t, 75, 2, 3);
    REQUIRE(p1.size() == p2.size());
    for (std::size_t k = 0; k < p1.size(); ++k) {
      CHECK(p1[k].start == p2[k].start);
      CHECK(p1[k].end == p2[k].end);
    }
  }
}

TEST_CASE("map assembly applies the row rules") {
  const int L = 24;
  std::vector<double> sil(L + 1);
  for (int i = 0; i <= L; ++i) sil[i] = i < 12 ? 0.0 : 1.0;
  std::vector<stats::MetricSeries> all{
      series_of(SeriesKind::umap_silhouette, Concept::drugs, sil),
      series_of(SeriesKind::umap_silhouette, Concept::drugs, plateau(L + 1, 0, 3), "mechanism"),
      series_of(SeriesKind::saliency, Concept::drugs, plateau(L, 10, 15)),
      series_of(SeriesKind::patching, Concept::drugs, plateau(L, 10, 15)),
  };
  const auto m = assemble_map(all, "toy", L);
  REQUIRE(m.rows.size() == 3);
  CHECK(m.rows[0].source == SeriesKind::umap_silhouette);
  CHECK(m.rows[0].rule == "rising_window");
  CHECK(m.rows[0].intervals[0].start <= 11);
  CHECK(m.rows[0].intervals[0].end >= 10);
  CHECK(m.rows[1].source == SeriesKind::saliency);
  CHECK(m.rows[1].intervals[0].start >= 9);
  CHECK(m.rows[1].intervals[0].end <= 16);
  CHECK(m.rows[2].intervals[0].category == Concept::drugs);
  REQUIRE(m.warnings.size() == 1);
  CHECK(m.warnings[0] == "drugs: no lesioning series; row omitted");
}

TEST_CASE("age rows use anisotropy with a percentile alternative") {
  std::vector<double> an(13);
  for (int i = 0; i < 13; ++i) an[i] = i * 0.05;
  const auto m = assemble_map({series_of(SeriesKind::umap_anisotropy, Concept::age, an),
                               series_of(SeriesKind::umap_silhouette, Concept::dosages, an),
                               series_of(SeriesKind::lesioning, Concept::dosages, plateau(12, 2, 4))},
                              "toy", 12);
  REQUIRE(m.rows.size() == 2);
  CHECK(m.rows[0].category == Concept::age);
  CHECK(m.rows[0].source == SeriesKind::umap_anisotropy);
  REQUIRE(m.alternatives.size() == 1);
  CHECK(m.alternatives[0].rule == "percentile");
  CHECK(m.rows[1].category == Concept::dosages);
  CHECK(m.rows[1].source == SeriesKind::lesioning);
}

TEST_CASE("map assembly errors and warnings") {
  const auto s = series_of(SeriesKind::saliency, Concept::symptoms, plateau(8, 2, 3));
  CHECK_THROWS_AS(assemble_map({s, s}, "toy", 8), Error);
  CHECK_THROWS_AS(assemble_map({s}, "toy", 4), Error);
  const auto flat = series_of(SeriesKind::saliency, Concept::symptoms, {1, 2});
  const auto m = assemble_map({flat}, "toy", 8);
  CHECK(m.rows.empty());
  CHECK(m.warnings.size() == 4);
}

TEST_CASE("map JSON round-trip and deterministic rendering") {
  const int L = 16;
  std::vector<stats::MetricSeries> all{
      series_of(SeriesKind::umap_silhouette, Concept::symptoms, plateau(L + 1, 6, 16)),
      series_of(SeriesKind::patching, Concept::symptoms, plateau(L, 4, 7)),
      series_of(SeriesKind::lesioning, Concept::diseases, plateau(L, 9, 12)),
  };
  const auto m = assemble_map(all, "toy <model>", L);
  CHECK(map_from_json(to_json(m)) == m);
  CHECK(to_json(m).at("schema") == "llmmap.map/1");

  const auto svg = render_map(m, "svg");
  CHECK(svg == render_map(assemble_map(all, "toy <model>", L), "svg"));
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("toy &lt;model&gt;") != std::string::npos);
  CHECK(nlohmann::json::parse(render_map(m, "json")) == to_json(m));
  CHECK_THROWS_AS(render_map(m, "png"), Error);
}
