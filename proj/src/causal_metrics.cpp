#include "llmmap/causal_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <tuple>

namespace llmmap::causal {

namespace {

constexpr const char* kModule = "causal-metrics";

stats::LayerStat cell_stat(const std::vector<double>& values, const stats::BootstrapOptions& base,
                           std::string_view stream, int layer) {
  stats::BootstrapOptions opts = base;
  opts.seed = derive_seed(derive_seed(base.seed, stream), static_cast<std::uint64_t>(layer));
  const auto ci = stats::bootstrap_mean(values, opts);
  return {ci.mean, ci.ci_low, ci.ci_high, ci.n};
}

std::string record_tag(const trace::PatchRecord& r) {
  return r.pair_id + "@" + std::to_string(r.layer) + "/" + std::string(trace::to_string(r.site));
}

}  // namespace

std::optional<PatchingEffect> patching_effect(const trace::PatchRecord& r, double eps) {
  const double ld_clean = r.logit_clean_r - r.logit_clean_rp;
  const double ld_corrupt = r.logit_corrupt_r - r.logit_corrupt_rp;
  const double ld_patched = r.logit_patched_r - r.logit_patched_rp;
  const double denom = ld_clean - ld_corrupt;
  if (!(std::fabs(denom) > eps)) return std::nullopt;
  const double p = (ld_patched - ld_corrupt) / denom;
  if (!std::isfinite(p)) return std::nullopt;
  return PatchingEffect{r.pair_id, r.layer, r.site, p, p > kSuccessThreshold};
}

PatchingProfile patching_profile(std::vector<trace::PatchRecord> records, int n_layers, Concept category,
                                 const stats::BootstrapOptions& opts, double eps) {
  if (n_layers < 1) throw Error(kModule, "n_layers must be at least 1");
  if (records.empty()) throw Error(kModule, "no patch records");
  auto key = [](const trace::PatchRecord& r) {
    return std::tie(r.layer, r.site, r.pair_id, r.logit_clean_r, r.logit_clean_rp, r.logit_corrupt_r,
                    r.logit_corrupt_rp, r.logit_patched_r, r.logit_patched_rp);
  };
  std::sort(records.begin(), records.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });

  const auto L = static_cast<std::size_t>(n_layers);
  std::vector<std::vector<double>> att(L), mlp(L), both(L);
  PatchingProfile out;
  for (const auto& r : records) {
    if (r.layer < 0 || r.layer >= n_layers)
      throw Error(kModule, "layer " + std::to_string(r.layer) + " outside [0, " + std::to_string(n_layers) + ")", {},
                  record_tag(r));
    const auto e = patching_effect(r, eps);
    if (!e) {
      ++out.degenerate;
      out.degenerate_ids.push_back(record_tag(r));
      continue;
    }
    const auto l = static_cast<std::size_t>(r.layer);
    (r.site == trace::PatchSite::attention ? att : mlp)[l].push_back(e->effect);
    both[l].push_back(e->effect);
  }

  auto build = [&](const std::vector<std::vector<double>>& cells, std::string_view variant,
                   std::vector<std::optional<double>>& fraction) {
    stats::MetricSeries s;
    s.analysis = SeriesKind::patching;
    s.category = category;
    s.variant = std::string(variant);
    s.per_layer.resize(L);
    fraction.assign(L, std::nullopt);
    for (std::size_t l = 0; l < L; ++l) {
      if (cells[l].empty()) continue;
      s.per_layer[l] = cell_stat(cells[l], opts, std::string("patching/") + std::string(variant), static_cast<int>(l));
      const auto hits = std::count_if(cells[l].begin(), cells[l].end(), [](double p) { return p > kSuccessThreshold; });
      fraction[l] = static_cast<double>(hits) / static_cast<double>(cells[l].size());
    }
    return s;
  };
  out.attention = build(att, "attention", out.success_fraction_attention);
  out.mlp = build(mlp, "mlp", out.success_fraction_mlp);
  out.combined = build(both, "", out.success_fraction);
  return out;
}

SaliencyProfile saliency_profile(std::vector<trace::SaliencyProfileRecord> records, Concept category,
                                 const stats::BootstrapOptions& opts) {
  if (records.empty()) throw Error(kModule, "no saliency records");
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.prompt_id, a.per_layer) < std::tie(b.prompt_id, b.per_layer);
  });
  const std::size_t L = records.front().per_layer.size();
  if (L == 0) throw Error(kModule, "saliency records have no layers", {}, records.front().prompt_id);
  for (const auto& r : records) {
    if (r.per_layer.size() != L)
      throw Error(kModule, "saliency record has " + std::to_string(r.per_layer.size()) + " layers, expected " +
                               std::to_string(L), {}, r.prompt_id);
    for (double v : r.per_layer)
      if (!std::isfinite(v) || v < 0.0)
        throw Error(kModule, "saliency values must be finite magnitudes (got " + std::to_string(v) + ")", {},
                    r.prompt_id);
  }

  SaliencyProfile out;
  out.mean.analysis = out.normalized.analysis = SeriesKind::saliency;
  out.mean.category = out.normalized.category = category;
  out.normalized.variant = "normalized";
  out.mean.per_layer.resize(L);
  std::vector<double> column(records.size());
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t i = 0; i < records.size(); ++i) column[i] = records[i].per_layer[l];
    out.mean.per_layer[l] = cell_stat(column, opts, "saliency", static_cast<int>(l));
  }
  double peak = 0.0;
  for (const auto& c : out.mean.per_layer) peak = std::max(peak, c->mean);
  out.normalized.per_layer = out.mean.per_layer;
  if (peak > 0.0)
    for (auto& c : out.normalized.per_layer) {
      c->mean /= peak;
      c->ci_low /= peak;
      c->ci_high /= peak;
    }
  return out;
}

stats::MetricSeries lesion_profile(std::vector<trace::LesionRecord> records, int n_layers, Concept category,
                                   const stats::BootstrapOptions& opts) {
  if (n_layers < 1) throw Error(kModule, "n_layers must be at least 1");
  if (records.empty()) throw Error(kModule, "no lesion records");
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.layer, a.prompt_id, a.judge_score) < std::tie(b.layer, b.prompt_id, b.judge_score);
  });
  const auto L = static_cast<std::size_t>(n_layers);
  std::vector<std::vector<double>> cells(L);
  for (const auto& r : records) {
    const std::string tag = r.prompt_id + "@" + std::to_string(r.layer);
    if (!r.judge_score)
      throw Error(kModule, "lesion record is not scored; run the judge command on this bundle first", {}, tag);
    if (*r.judge_score < 1 || *r.judge_score > 10)
      throw Error(kModule, "judge score " + std::to_string(*r.judge_score) + " outside 1..10", {}, tag);
    if (r.layer < 0 || r.layer >= n_layers)
      throw Error(kModule, "layer " + std::to_string(r.layer) + " outside [0, " + std::to_string(n_layers) + ")", {},
                  tag);
    cells[static_cast<std::size_t>(r.layer)].push_back(*r.judge_score);
  }
  stats::MetricSeries s;
  s.analysis = SeriesKind::lesioning;
  s.category = category;
  s.per_layer.resize(L);
  for (std::size_t l = 0; l < L; ++l)
    if (!cells[l].empty()) s.per_layer[l] = cell_stat(cells[l], opts, "lesioning", static_cast<int>(l));
  return s;
}

std::string patching_heatmap_csv(const PatchingProfile& profile) {
  std::ostringstream os;
  os.precision(17);
  os << "layer,attention,mlp\n";
  const auto L = std::max(profile.attention.per_layer.size(), profile.mlp.per_layer.size());
  auto cell = [&](const stats::MetricSeries& s, std::size_t l) {
    if (l < s.per_layer.size() && s.per_layer[l]) os << s.per_layer[l]->mean;
  };
  for (std::size_t l = 0; l < L; ++l) {
    os << l << ',';
    cell(profile.attention, l);
    os << ',';
    cell(profile.mlp, l);
    os << '\n';
  }
  return os.str();
}

}  // namespace llmmap::causal
