// Acceptance suite: one PASS/FAIL line per criterion. Tolerances and time budgets are fixed here.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "llmmap/cartographer.hpp"
#include "llmmap/causal_metrics.hpp"
#include "llmmap/geometry_metrics.hpp"
#include "llmmap/judge_client.hpp"
#include "llmmap/manifold.hpp"
#include "llmmap/pipeline.hpp"
#include "llmmap/stats.hpp"
#include "llmmap/trace_store.hpp"
#include "support/mock_judge.hpp"
#include "support/planted.hpp"

using namespace llmmap;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// A criterion body returns "" on success or a failure description; `detail` receives a summary either way.
struct Criterion {
  const char* name;
  std::function<std::string(std::string& detail)> run;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------- silhouette

double brute_silhouette(const PointMatrix& x, const std::vector<int>& lab) {
  const auto n = static_cast<std::size_t>(x.rows());
  std::set<int> clusters(lab.begin(), lab.end());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t own = 0;
    for (std::size_t j = 0; j < n; ++j) own += lab[j] == lab[i];
    if (own == 1) continue;  // singleton contributes 0
    double a = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && lab[j] == lab[i])
        a += std::sqrt((x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).squaredNorm());
    a /= static_cast<double>(own - 1);
    double b = INFINITY;
    for (int c : clusters) {
      if (c == lab[i]) continue;
      double s = 0.0;
      std::size_t m = 0;
      for (std::size_t j = 0; j < n; ++j)
        if (lab[j] == c) {
          s += std::sqrt((x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).squaredNorm());
          ++m;
        }
      b = std::min(b, s / static_cast<double>(m));
    }
    const double d = std::max(a, b);
    total += d > 0.0 ? (b - a) / d : 0.0;
  }
  return total / static_cast<double>(n);
}

std::string silhouette_oracle(std::string& detail) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int k = std::uniform_int_distribution<int>(2, 5)(rng);
    const int n = std::uniform_int_distribution<int>(k, 100)(rng);
    const int d = std::uniform_int_distribution<int>(1, 30)(rng);
    std::vector<int> lab(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) lab[static_cast<std::size_t>(i)] = i < k ? i : std::uniform_int_distribution<int>(0, k - 1)(rng);
    std::shuffle(lab.begin(), lab.end(), rng);
    std::normal_distribution<double> g;
    PointMatrix x(n, d);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) x(i, j) = g(rng) + 1.5 * lab[static_cast<std::size_t>(i)] * (j == 0);
    worst = std::max(worst, std::fabs(geometry::silhouette(x, lab) - brute_silhouette(x, lab)));
  }
  const double t = seconds_since(t0);
  detail = "max |diff| " + fmt("%.3g", worst) + ", " + fmt("%.2f s", t);
  if (worst > 1e-9) return "silhouette differs from brute force";
  if (t >= 10.0) return "runtime over 10 s";
  return {};
}

// ---------------------------------------------------------------- anisotropy

std::string anisotropy_extremes(std::string& detail) {
  const auto t0 = Clock::now();
  PointMatrix line(100, 2);
  for (int i = 0; i < 100; ++i) {
    line(i, 0) = 0.5 + 0.3 * i;
    line(i, 1) = -2.0 + 0.7 * i;
  }
  const double a_line = geometry::local_anisotropy(line, 20);

  // 5x5 grid; every neighborhood is the whole grid, whose covariance is isotropic.
  PointMatrix grid(25, 2);
  for (int i = 0; i < 25; ++i) {
    grid(i, 0) = i % 5;
    grid(i, 1) = i / 5;
  }
  const double a_grid = geometry::local_anisotropy(grid, 24);

  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  const int n = 2000;
  PointMatrix gauss(n, 2);
  for (int i = 0; i < n; ++i) {
    gauss(i, 0) = 2.0 * g(rng);
    gauss(i, 1) = g(rng);
  }
  const double a_gauss = geometry::local_anisotropy(gauss, n - 1);
  const double t = seconds_since(t0);
  detail = "collinear " + fmt("%.12f", a_line) + ", grid " + fmt("%.3g", a_grid) + ", diag(4,1) " +
           fmt("%.4f", a_gauss) + ", " + fmt("%.2f s", t);
  if (std::fabs(a_line - 1.0) > 1e-9) return "collinear fixture not 1";
  if (std::fabs(a_grid) > 1e-9) return "grid fixture not 0";
  if (std::fabs(a_gauss - 0.75) > 0.1) return "Gaussian fixture outside 0.75 +- 0.1";
  if (t >= 5.0) return "runtime over 5 s";
  return {};
}

// ---------------------------------------------------------------- patching

std::string patching_algebra(std::string& detail) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-10, 10), shift(-10, 10);
  int exact = 0, checked = 0;
  double worst = 0.0;
  while (checked < 1000) {
    trace::PatchRecord r{"p", 0, trace::PatchSite::mlp, u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)};
    const double ld_clean = r.logit_clean_r - r.logit_clean_rp, ld_corrupt = r.logit_corrupt_r - r.logit_corrupt_rp;
    if (std::fabs(ld_clean - ld_corrupt) < 0.5) continue;  // keep the ratio well conditioned
    ++checked;

    auto at_clean = r, at_corrupt = r;
    at_clean.logit_patched_r = r.logit_clean_r;
    at_clean.logit_patched_rp = r.logit_clean_rp;
    at_corrupt.logit_patched_r = r.logit_corrupt_r;
    at_corrupt.logit_patched_rp = r.logit_corrupt_rp;
    exact += causal::patching_effect(at_clean)->effect == 1.0 && causal::patching_effect(at_corrupt)->effect == 0.0;

    // Adding a constant to both logits of a run leaves its logit difference unchanged.
    auto shifted = r;
    const double s1 = shift(rng), s2 = shift(rng), s3 = shift(rng);
    shifted.logit_clean_r += s1;
    shifted.logit_clean_rp += s1;
    shifted.logit_corrupt_r += s2;
    shifted.logit_corrupt_rp += s2;
    shifted.logit_patched_r += s3;
    shifted.logit_patched_rp += s3;
    worst = std::max(worst, std::fabs(causal::patching_effect(r)->effect - causal::patching_effect(shifted)->effect));
  }
  detail = std::to_string(exact) + "/1000 exact endpoints, max shift diff " + fmt("%.3g", worst);
  if (exact != 1000) return "P(clean)=1 / P(corrupt)=0 not exact";
  if (worst > 1e-12) return "logit-shift invariance violated";
  return {};
}

// ---------------------------------------------------------------- intervals

std::string interval_selection(std::string& detail) {
  std::vector<std::string> bad;
  // Flat then +10 at layer 8: forward differences put the jump at index 7; windows 5..7 tie, lowest wins.
  map::Series step;
  for (int i = 0; i < 16; ++i) step.push_back(i < 8 ? 0.0 : 10.0);
  const auto s = map::rising_window_interval(step, 3);
  if (s.start != 5 || s.end != 7 || std::fabs(s.strength - 10.0 / 3) > 1e-12) bad.push_back("step");

  const map::Series single{0, 0, 0, 0, 9, 9, 0, 0};
  const auto p = map::percentile_intervals(single, 75, 2, 3);
  if (p.size() != 1 || p[0].start != 4 || p[0].end != 5) bad.push_back("plateau");

  map::Series five(30, 0.0);
  const double heights[] = {3, 7, 5, 9, 4};
  for (int k = 0; k < 5; ++k) five[3 + 5 * k] = five[4 + 5 * k] = heights[k];
  const auto top = map::percentile_intervals(five, 60, 2, 3);
  if (top.size() != 3 || top[0].start != 8 || top[1].start != 13 || top[2].start != 18) bad.push_back("five plateaus");

  std::mt19937_64 rng(31);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> scale(0.01, 100.0), shift(-50, 50);
  int invariant = 0;
  for (int trial = 0; trial < 100; ++trial) {
    map::Series a, b, c;
    const double k = scale(rng), o = shift(rng);
    for (int i = 0; i < 30; ++i) {
      const double v = g(rng) + 0.1 * i;
      a.push_back(v);
      b.push_back(k * v);
      c.push_back(v + o);
    }
    const auto ra = map::rising_window_interval(a), rb = map::rising_window_interval(b),
               rc = map::rising_window_interval(c);
    const auto pa = map::percentile_intervals(a), pb = map::percentile_intervals(b), pc = map::percentile_intervals(c);
    auto same = [](const std::vector<map::LayerInterval>& x, const std::vector<map::LayerInterval>& y) {
      if (x.size() != y.size()) return false;
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i].start != y[i].start || x[i].end != y[i].end) return false;
      return true;
    };
    invariant += ra.start == rb.start && ra.start == rc.start && same(pa, pb) && same(pa, pc);
  }
  if (invariant != 100) bad.push_back("invariance");
  detail = "step [" + std::to_string(s.start) + "," + std::to_string(s.end) + "], invariance " +
           std::to_string(invariant) + "/100";
  std::string out;
  for (const auto& b : bad) out += (out.empty() ? "" : ", ") + b;
  return out;
}

// ---------------------------------------------------------------- smoothing

std::string smoothing(std::string& detail) {
  const std::vector<double> flat(20, -3.25);
  double worst_flat = 0.0;
  for (double v : map::gaussian_smooth(flat, 1.0)) worst_flat = std::max(worst_flat, std::fabs(v + 3.25));
  std::vector<double> impulse(21, 0.0);
  impulse[10] = 1.0;
  const auto s = map::gaussian_smooth(impulse, 1.0);
  // Kernel truncated at 3 sigma, weights exp(-k^2/2) normalized over k = -3..3.
  double z = 0.0;
  for (int k = -3; k <= 3; ++k) z += std::exp(-0.5 * k * k);
  double worst_imp = 0.0;
  for (int i = 0; i < 21; ++i) {
    const int k = i - 10;
    const double want = std::abs(k) <= 3 ? std::exp(-0.5 * k * k) / z : 0.0;
    worst_imp = std::max(worst_imp, std::fabs(s[static_cast<std::size_t>(i)] - want));
  }
  detail = "constant " + fmt("%.3g", worst_flat) + ", impulse " + fmt("%.3g", worst_imp);
  if (worst_flat > 1e-12) return "constant series changed";
  if (worst_imp > 1e-9) return "impulse response differs from kernel";
  return {};
}

// ---------------------------------------------------------------- umap

std::string umap_quality(std::string& detail) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  const int n = 300, d = 20;
  PointMatrix x(n, d);
  std::vector<int> lab(n);
  std::vector<Eigen::VectorXd> centers;
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd v(d);
    for (int j = 0; j < d; ++j) v[j] = 6.0 * g(rng);
    centers.push_back(v);
  }
  for (int i = 0; i < n; ++i) {
    lab[i] = i % 3;
    for (int j = 0; j < d; ++j) x(i, j) = centers[static_cast<std::size_t>(lab[i])][j] + g(rng);
  }
  const manifold::UmapParams params;
  const auto e1 = manifold::umap_embed(x, 2, params, 42);
  const auto e2 = manifold::umap_embed(x, 2, params, 42);
  const double sil = geometry::silhouette(e1.points, lab);

  const auto knn = manifold::knn_graph(e1.points, 5);
  int agree = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 5; ++j) agree += lab[knn.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j))] == lab[i];
  const double purity = agree / (5.0 * n);
  const bool same = e1.points.size() == e2.points.size() &&
                    std::memcmp(e1.points.data(), e2.points.data(), sizeof(double) * e1.points.size()) == 0;
  const double t = seconds_since(t0);
  detail = "silhouette " + fmt("%.3f", sil) + ", 5-NN purity " + fmt("%.3f", purity) +
           (same ? ", bit-exact" : ", NOT bit-exact") + ", " + fmt("%.2f s", t);
  if (sil <= 0.5) return "silhouette not above 0.5";
  if (purity < 0.8) return "neighborhood purity below 80%";
  if (!same) return "same seed gave different embeddings";
  if (t >= 60.0) return "runtime over 60 s";
  return {};
}

// ---------------------------------------------------------------- planted end-to-end

std::string planted_end_to_end(std::string& detail) {
  const auto t0 = Clock::now();
  const auto root = fs::temp_directory_path() / ("llmmap_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  testing::PlantSpec spec;
  const auto b = testing::write_planted(root / "bundles", spec);
  pipeline::PipelineConfig c;
  c.out = root / "reports";
  c.seed = 3;
  c.export_embeddings = false;
  pipeline::cmd_analyze(c, Analysis::umap, b.corpus, b.activations);
  pipeline::cmd_analyze(c, Analysis::saliency, b.corpus, b.saliency);
  pipeline::cmd_analyze(c, Analysis::lesioning, b.corpus, b.lesion);
  pipeline::cmd_analyze(c, Analysis::patching, b.corpus, b.patch);
  auto mc = c;
  mc.out = root / "map";
  const auto m = pipeline::cmd_map(mc, {c.out});
  fs::remove_all(root);
  const double t = seconds_since(t0);

  std::set<std::string> hit;
  std::ostringstream rows;
  for (const auto& row : m.at("rows")) {
    const std::string src = row.at("source");
    rows << " " << src << "=";
    for (const auto& iv : row.at("intervals")) {
      rows << "[" << iv[0] << "," << iv[1] << "]";
      if (iv[0].get<int>() <= spec.band_hi && iv[1].get<int>() >= spec.band_lo) hit.insert(src);
    }
  }
  detail = rows.str().substr(1) + ", " + fmt("%.1f s", t);
  for (const char* src : {"umap_silhouette", "saliency", "lesioning", "patching"})
    if (!hit.count(src)) return std::string(src) + " row misses layers 10-15";
  if (t >= 120.0) return "runtime over 2 min";
  return {};
}

// ---------------------------------------------------------------- bootstrap

std::string bootstrap_behavior(std::string& detail) {
  stats::BootstrapOptions o;
  o.seed = 11;
  const std::vector<double> flat(50, 4.2);
  const auto z = stats::bootstrap_mean(flat, o);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  std::vector<double> small(100), large(1600);
  for (auto& v : small) v = g(rng);
  for (auto& v : large) v = g(rng);
  const auto a = stats::bootstrap_mean(small, o), b = stats::bootstrap_mean(large, o);
  const double ratio = (a.ci_high - a.ci_low) / (b.ci_high - b.ci_low);
  detail = "zero-variance width " + fmt("%.3g", z.ci_high - z.ci_low) + ", width ratio " + fmt("%.3f", ratio);
  if (z.ci_low != z.mean || z.ci_high != z.mean) return "zero-variance CI has width";
  if (ratio < 2.0 || ratio > 6.0) return "width ratio outside 4 +- 50%";
  return {};
}

// ---------------------------------------------------------------- judge

std::string judge_client(std::string& detail) {
  const auto& styles = testing::reply_styles();
  int parsed = 0;
  for (const auto& s : styles) parsed += judge::parse_score(s.reply) == s.score;
  int rejected = 0;
  for (const char* bad : {"15", "Score: 0", "12/10"}) {
    try {
      judge::parse_score(bad);
    } catch (const Error&) {
      ++rejected;
    }
  }
  rejected += !judge::parse_score("No number here.") && !judge::parse_score("7.5/10");

  testing::MockJudge mock([](const json& messages) -> std::pair<int, std::string> {
    const std::string content = messages.at(0).at("content");
    return {200, content.find("severe") != std::string::npos ? "Score: 9" : "2/10"};
  });
  judge::JudgeConfig cfg;
  cfg.endpoint = mock.endpoint();
  cfg.backoff_ms = 1;
  judge::JudgeClient client(cfg);
  std::vector<trace::LesionRecord> batch;
  for (int l = 0; l < 6; ++l)
    batch.push_back({"q", l, "Aspirin.", l % 2 ? "severe garble" : "Aspirin!", std::nullopt, std::nullopt, std::nullopt});
  const auto first = client.score_batch(batch);
  const auto calls_first = client.network_calls();
  const auto second = client.score_batch(batch);
  const auto repeat_calls = client.network_calls() - calls_first;
  const bool scores_ok = second.records[1].judge_score == 9 && second.records[0].judge_score == 2 && first.failures.empty();

  detail = std::to_string(parsed) + "/" + std::to_string(styles.size()) + " styles, " + std::to_string(rejected) +
           "/4 rejections, first batch " + std::to_string(calls_first) + " calls, repeat " + std::to_string(repeat_calls);
  if (styles.size() < 20) return "fewer than 20 reply styles";
  if (parsed != static_cast<int>(styles.size())) return "reply style parsed incorrectly";
  if (rejected != 4) return "invalid replies not rejected";
  if (!scores_ok) return "batch scores wrong";
  if (repeat_calls != 0) return "repeated batch hit the network";
  return {};
}

// ---------------------------------------------------------------- conformance

std::uint32_t bits_of(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof u);
  return u;
}

std::string hex_of(double d) {
  unsigned char b[8];
  std::memcpy(b, &d, 8);
  char out[17];
  for (int i = 0; i < 8; ++i) std::snprintf(out + 2 * i, 3, "%02x", b[i]);
  return out;
}

std::string conformance(std::string& detail) {
  const fs::path root = fs::path(LLMMAP_FIXTURE_DIR) / "conformance";
  std::ifstream in(root / "expected.json");
  if (!in) return "fixture missing";
  const auto want = json::parse(in);
  std::size_t values = 0;
  auto header_ok = [&](const trace::RunBundle& b) {
    const auto& m = b.manifest();
    return m.model_name == want["model_name"] && m.n_layers == want["n_layers"] && m.hidden_dim == want["hidden_dim"] &&
           m.corpus_id == want["corpus_id"];
  };

  const auto act = trace::load_run(root / "activations");
  if (!header_ok(act)) return "activation manifest differs";
  for (const auto& e : want["activations"]) {
    const auto t = act.activation(e["prompt_id"].get<std::string>());
    if (t.matrix.shape != e["shape"].get<std::vector<std::uint64_t>>()) return "activation shape differs";
    const auto bits = e["bits"].get<std::vector<std::uint32_t>>();
    if (bits.size() != t.matrix.data.size()) return "activation size differs";
    for (std::size_t i = 0; i < bits.size(); ++i, ++values)
      if (bits_of(t.matrix.data[i]) != bits[i]) return "activation bits differ at " + std::to_string(i);
  }

  const auto sal = trace::load_run(root / "saliency");
  if (!header_ok(sal) || sal.saliency().size() != want["saliency"].size()) return "saliency bundle differs";
  for (std::size_t r = 0; r < sal.saliency().size(); ++r) {
    const auto& e = want["saliency"][r];
    if (sal.saliency()[r].prompt_id != e["prompt_id"]) return "saliency id differs";
    for (std::size_t i = 0; i < e["per_layer_f64"].size(); ++i, ++values)
      if (hex_of(sal.saliency()[r].per_layer.at(i)) != e["per_layer_f64"][i]) return "saliency value differs";
  }

  const auto les = trace::load_run(root / "lesion");
  if (!header_ok(les) || les.lesions().size() != want["lesion"].size()) return "lesion bundle differs";
  for (std::size_t r = 0; r < les.lesions().size(); ++r, ++values)
    if (trace::to_json(les.lesions()[r]) != want["lesion"][r]) return "lesion record " + std::to_string(r) + " differs";

  const auto pat = trace::load_run(root / "patch");
  if (!header_ok(pat) || pat.patches().size() != want["patch"].size()) return "patch bundle differs";
  for (std::size_t r = 0; r < pat.patches().size(); ++r) {
    const auto& p = pat.patches()[r];
    const auto& e = want["patch"][r];
    if (p.pair_id != e["pair_id"] || p.layer != e["layer"] || trace::to_string(p.site) != e["site"])
      return "patch key differs";
    const double got[] = {p.logit_clean_r,   p.logit_clean_rp,   p.logit_corrupt_r,
                          p.logit_corrupt_rp, p.logit_patched_r, p.logit_patched_rp};
    for (int i = 0; i < 6; ++i, ++values)
      if (hex_of(got[i]) != e["logits_f64"][i]) return "patch logit differs";
  }
  detail = "4 bundles, " + std::to_string(values) + " values bit-identical";
  return {};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"silhouette-oracle", silhouette_oracle},
      {"anisotropy-extremes", anisotropy_extremes},
      {"patching-algebra", patching_algebra},
      {"interval-selection", interval_selection},
      {"gaussian-smoothing", smoothing},
      {"umap-quality", umap_quality},
      {"planted-end-to-end", planted_end_to_end},
      {"bootstrap-behavior", bootstrap_behavior},
      {"judge-client", judge_client},
      {"format-conformance", conformance},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    std::string detail, why;
    try {
      why = c.run(detail);
    } catch (const std::exception& e) {
      why = std::string("exception: ") + e.what();
    }
    if (why.empty()) {
      std::printf("PASS %s (%s)\n", c.name, detail.c_str());
    } else {
      ++failed;
      std::printf("FAIL %s: %s (%s)\n", c.name, why.c_str(), detail.c_str());
    }
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
