#include "llmmap/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <set>

#include "llmmap/causal_metrics.hpp"
#include "llmmap/geometry_metrics.hpp"
#include "llmmap/trace_store.hpp"

namespace llmmap::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModule = "cli";

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(kModule, "cannot open output file", path.string());
  out << text;
  if (!out) throw Error(kModule, "write failed", path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void require_exists(const fs::path& p, const char* what) {
  if (p.empty()) throw Error(kModule, std::string(what) + " path is required");
  if (!fs::exists(p)) throw Error(kModule, std::string(what) + " not found", p.string());
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(kModule, where + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw Error(kModule, "unknown configuration key '" + k + "' in " + where);
}

// Collects the derived seeds used by a command so they can be written into every output.
class SeedBook {
 public:
  explicit SeedBook(std::uint64_t base) : base_(base) {}
  std::uint64_t get(const std::string& stream) {
    const auto s = derive_seed(base_, stream);
    std::lock_guard lock(mutex_);
    seeds_[stream] = s;
    return s;
  }
  json to_json() const {
    std::lock_guard lock(mutex_);
    return json(seeds_);
  }

 private:
  std::uint64_t base_;
  mutable std::mutex mutex_;
  std::map<std::string, std::uint64_t> seeds_;
};

json provenance(const PipelineConfig& c, const std::string& command, const trace::RunManifest& m,
                const json& seeds) {
  return {{"command", command},
          {"model_name", m.model_name},
          {"n_layers", m.n_layers},
          {"corpus_id", m.corpus_id},
          {"seed", c.seed},
          {"derived_seeds", seeds}};
}

std::string series_file(const stats::MetricSeries& s) {
  std::string name = "series-" + std::string(to_string(s.analysis)) + "-" + std::string(to_string(s.category));
  if (!s.variant.empty()) name += "-" + s.variant;
  return name + ".json";
}

fs::path emit_series(const PipelineConfig& c, const stats::MetricSeries& s, const json& prov) {
  json j = stats::to_json(s);
  j["provenance"] = prov;
  const auto path = c.out / series_file(s);
  write_json(path, j);
  return path;
}

stats::BootstrapOptions boot(const PipelineConfig& c, std::uint64_t seed) {
  stats::BootstrapOptions o;
  o.n_resamples = c.bootstrap_resamples;
  o.seed = seed;
  return o;
}

const prompts::PromptRecord& lookup(const prompts::CorpusManifest& corpus, const std::string& id,
                                    const fs::path& bundle) {
  const auto* r = corpus.find(id);
  if (!r) throw Error(kModule, "record does not appear in the corpus", bundle.string(), id);
  return *r;
}

std::string label_text(const prompts::LabelValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  return prompts::label_to_json(v).dump();
}

double label_number(const prompts::LabelValue& v, const std::string& key, const std::string& id) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&v)) return *d;
  throw Error(kModule, "label '" + key + "' is not numeric", {}, id);
}

const prompts::LabelValue& label_of(const prompts::PromptRecord& r, const std::string& key) {
  const auto it = r.labels.find(key);
  if (it == r.labels.end()) throw Error(kModule, "prompt has no '" + key + "' label", {}, r.prompt_id);
  return it->second;
}

trace::CaptureKind expected_kind(Analysis a) {
  switch (a) {
    case Analysis::umap: return trace::CaptureKind::activations;
    case Analysis::saliency: return trace::CaptureKind::saliency;
    case Analysis::lesioning: return trace::CaptureKind::lesion_responses;
    case Analysis::patching: return trace::CaptureKind::patch_logits;
  }
  return trace::CaptureKind::activations;
}

json stat_json(const stats::Interval& i) {
  return {{"mean", i.mean}, {"ci_low", i.ci_low}, {"ci_high", i.ci_high}, {"n", i.n}};
}

json optional_array(const std::vector<std::optional<double>>& v) {
  json out = json::array();
  for (const auto& x : v) out.push_back(x ? json(*x) : json(nullptr));
  return out;
}

stats::LayerStat to_layer(const stats::Interval& i) { return {i.mean, i.ci_low, i.ci_high, i.n}; }

// ---------------------------------------------------------------- umap

struct LayerResult {
  std::optional<manifold::Embedding> plot;
  std::vector<std::optional<stats::Interval>> silhouettes;  // per label key
  std::optional<stats::Interval> contrast;                  // first key minus second key
  std::optional<stats::Interval> anisotropy;
  json age_fit;
  json circularity;
};

json analyze_umap(const PipelineConfig& c, const prompts::CorpusManifest& corpus, const trace::RunBundle& bundle,
                  const fs::path& bundle_path) {
  std::map<Concept, std::vector<const prompts::PromptRecord*>> groups;
  for (const auto& id : bundle.prompt_ids()) {
    const auto& r = lookup(corpus, id, bundle_path);
    groups[r.category].push_back(&r);
  }

  SeedBook seeds(c.seed);
  json outputs = json::array();
  json warnings = json::array();
  const int rows = bundle.manifest().n_layers + 1;
  const auto min_n = static_cast<std::size_t>(std::max(c.umap.n_neighbors + 1, 4));

  for (const auto& [category, recs] : groups) {
    const std::string cname(to_string(category));
    if (recs.size() < min_n) {
      warnings.push_back(cname + ": " + std::to_string(recs.size()) + " prompts, UMAP needs at least " +
                         std::to_string(min_n) + "; skipped");
      continue;
    }
    const auto n = static_cast<Eigen::Index>(recs.size());
    std::vector<PointMatrix> traces;
    traces.reserve(recs.size());
    for (const auto* r : recs) traces.push_back(bundle.activation(r->prompt_id).to_matrix());

    std::vector<std::string> keys;
    if (const auto it = c.silhouette_labels.find(category); it != c.silhouette_labels.end()) keys = it->second;
    std::vector<std::vector<int>> codes;
    for (const auto& key : keys) {
      std::vector<std::string> text;
      for (const auto* r : recs) text.push_back(label_text(label_of(*r, key)));
      codes.push_back(geometry::encode_labels(text));
    }
    const bool is_age = category == Concept::age;
    const bool is_prog = category == Concept::progression;
    const bool need_plot = c.export_embeddings || is_age || is_prog;

    std::vector<double> ages;
    std::map<std::string, std::vector<std::pair<int, Eigen::Index>>> stages;  // disease -> (stage, row)
    if (is_age)
      for (const auto* r : recs) ages.push_back(label_number(label_of(*r, "age"), "age", r->prompt_id));
    if (is_prog)
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto* r = recs[static_cast<std::size_t>(i)];
        stages[label_text(label_of(*r, "disease"))].emplace_back(
            static_cast<int>(label_number(label_of(*r, "stage"), "stage", r->prompt_id)), i);
      }

    std::vector<LayerResult> results(static_cast<std::size_t>(rows));
    parallel_for(static_cast<std::size_t>(rows), c.jobs, [&](std::size_t l) {
      const std::string layer_tag = "layer" + std::to_string(l);
      const std::string ctx = cname + " " + layer_tag;
      PointMatrix x(n, traces.front().cols());
      for (Eigen::Index i = 0; i < n; ++i) x.row(i) = traces[static_cast<std::size_t>(i)].row(static_cast<Eigen::Index>(l));
      auto& out = results[l];
      out.silhouettes.resize(keys.size());

      if (need_plot)
        out.plot = manifold::umap_embed(x, c.plot_dim, c.umap,
                                        seeds.get("umap/" + cname + "/d" + std::to_string(c.plot_dim) + "/" + layer_tag), ctx);
      if (!keys.empty()) {
        const auto emb = manifold::umap_embed(
            x, c.silhouette_dim, c.umap,
            seeds.get("umap/" + cname + "/d" + std::to_string(c.silhouette_dim) + "/" + layer_tag), ctx);
        if (keys.size() >= 2) {
          const auto lc = geometry::label_contrast(
              emb.points, codes[0], codes[1],
              boot(c, seeds.get("bootstrap/silhouette/" + cname + "/" + keys[0] + "-vs-" + keys[1] + "/" + layer_tag)));
          out.silhouettes[0] = lc.silhouette_a;
          out.silhouettes[1] = lc.silhouette_b;
          out.contrast = lc.difference;
        }
        for (std::size_t k = 0; k < keys.size(); ++k) {
          if (out.silhouettes[k]) continue;
          out.silhouettes[k] = geometry::silhouette_ci(
              emb.points, codes[k], boot(c, seeds.get("bootstrap/silhouette/" + cname + "/" + keys[k] + "/" + layer_tag)));
        }
      }
      if (is_age) {
        if (out.plot->points.rows() > c.anisotropy_k)
          out.anisotropy = geometry::local_anisotropy_ci(out.plot->points, static_cast<std::size_t>(c.anisotropy_k),
                                                         boot(c, seeds.get("bootstrap/anisotropy/age/" + layer_tag)));
        try {
          const auto fit = geometry::age_linear_fit(out.plot->points, ages);
          out.age_fit = {{"r_squared", fit.r_squared}, {"residuals", fit.residuals}};
        } catch (const Error& e) {
          out.age_fit = {{"r_squared", nullptr}, {"error", e.detail()}};
        }
      }
      if (is_prog) {
        std::map<std::string, geometry::StageCircularity> per;
        json skipped = json::array();
        for (const auto& [disease, members] : stages) {
          PointMatrix pts(static_cast<Eigen::Index>(members.size()), out.plot->points.cols());
          std::vector<int> st;
          for (std::size_t m = 0; m < members.size(); ++m) {
            pts.row(static_cast<Eigen::Index>(m)) = out.plot->points.row(members[m].second);
            st.push_back(members[m].first);
          }
          try {
            per[disease] = geometry::stage_circularity(pts, st);
          } catch (const Error& e) {
            skipped.push_back(disease + ": " + e.detail());
          }
        }
        json pd = json::object();
        for (const auto& [d, v] : per) pd[d] = {{"csfs", v.csfs}, {"csls", v.csls}};
        out.circularity = {{"per_disease", pd}, {"skipped", skipped}};
        if (!per.empty()) {
          const auto s = geometry::summarize_circularity(per);
          out.circularity["csfs_mean"] = s.csfs_mean;
          out.circularity["csfs_std"] = s.csfs_std;
          out.circularity["csls_mean"] = s.csls_mean;
          out.circularity["csls_std"] = s.csls_std;
        }
      }
    });

    const json prov = provenance(c, "analyze umap", bundle.manifest(), seeds.to_json());
    for (std::size_t k = 0; k < keys.size(); ++k) {
      stats::MetricSeries s;
      s.analysis = SeriesKind::umap_silhouette;
      s.category = category;
      s.variant = k == 0 ? "" : keys[k];
      for (const auto& r : results) s.per_layer.push_back(to_layer(*r.silhouettes[k]));
      outputs.push_back(emit_series(c, s, prov).string());
    }
    if (keys.size() >= 2) {
      json layers = json::array();
      for (const auto& r : results) layers.push_back(stat_json(*r.contrast));
      const auto path = c.out / ("umap-" + cname + "-label-contrast.json");
      write_json(path, {{"labels", {keys[0], keys[1]}}, {"difference", layers}, {"provenance", prov}});
      outputs.push_back(path.string());
    }
    if (is_age) {
      stats::MetricSeries s;
      s.analysis = SeriesKind::umap_anisotropy;
      s.category = category;
      for (const auto& r : results)
        s.per_layer.push_back(r.anisotropy ? std::optional(to_layer(*r.anisotropy)) : std::nullopt);
      outputs.push_back(emit_series(c, s, prov).string());
      json layers = json::array();
      for (const auto& r : results) layers.push_back(r.age_fit);
      const auto path = c.out / "umap-age-linearity.json";
      write_json(path, {{"layers", layers}, {"provenance", prov}});
      outputs.push_back(path.string());
    }
    if (is_prog) {
      json layers = json::array();
      for (const auto& r : results) layers.push_back(r.circularity);
      const auto path = c.out / "umap-progression-circularity.json";
      write_json(path, {{"aggregation", "mean and population std across diseases"}, {"layers", layers}, {"provenance", prov}});
      outputs.push_back(path.string());
    }
    if (c.export_embeddings) {
      std::vector<manifold::Embedding> plots;
      for (auto& r : results) plots.push_back(std::move(*r.plot));
      std::vector<std::string> ids;
      for (const auto* r : recs) ids.push_back(r->prompt_id);
      auto j = manifold::embeddings_to_json(plots, ids);
      j["provenance"] = prov;
      const auto path = c.out / ("embeddings-" + cname + ".json");
      write_json(path, j);
      outputs.push_back(path.string());
    }
  }
  if (outputs.empty() && warnings.empty()) throw Error(kModule, "no records", bundle_path.string());
  return {{"outputs", outputs}, {"warnings", warnings}, {"derived_seeds", seeds.to_json()}};
}

// ---------------------------------------------------------------- causal

template <typename Rec, typename IdFn>
std::map<Concept, std::vector<Rec>> group_by_concept(const std::vector<Rec>& records,
                                                     const prompts::CorpusManifest& corpus, const fs::path& bundle,
                                                     IdFn id_of) {
  std::map<std::string, Concept> pair_concept;
  for (const auto& p : corpus.prompts)
    if (p.pair_id) pair_concept[*p.pair_id] = p.category;
  std::map<Concept, std::vector<Rec>> out;
  for (const auto& r : records) {
    const auto& [id, is_pair] = id_of(r);
    if (is_pair) {
      const auto it = pair_concept.find(id);
      if (it == pair_concept.end()) throw Error(kModule, "pair does not appear in the corpus", bundle.string(), id);
      out[it->second].push_back(r);
    } else {
      out[lookup(corpus, id, bundle).category].push_back(r);
    }
  }
  return out;
}

json analyze_causal(const PipelineConfig& c, Analysis a, const prompts::CorpusManifest& corpus,
                    const trace::RunBundle& bundle, const fs::path& bundle_path) {
  SeedBook seeds(c.seed);
  json outputs = json::array();
  json details = json::object();
  const int L = bundle.manifest().n_layers;

  if (a == Analysis::saliency) {
    const auto groups = group_by_concept(bundle.saliency(), corpus, bundle_path,
                                         [](const auto& r) { return std::pair{r.prompt_id, false}; });
    for (const auto& [category, recs] : groups) {
      const std::string cname(to_string(category));
      const auto prof = causal::saliency_profile(recs, category, boot(c, seeds.get("bootstrap/saliency/" + cname)));
      const auto prov = provenance(c, "analyze saliency", bundle.manifest(), seeds.to_json());
      outputs.push_back(emit_series(c, prof.mean, prov).string());
      outputs.push_back(emit_series(c, prof.normalized, prov).string());
      details[cname] = {{"records", recs.size()}};
    }
  } else if (a == Analysis::lesioning) {
    const auto groups = group_by_concept(bundle.lesions(), corpus, bundle_path,
                                         [](const auto& r) { return std::pair{r.prompt_id, false}; });
    for (const auto& [category, recs] : groups) {
      const std::string cname(to_string(category));
      const auto s = causal::lesion_profile(recs, L, category, boot(c, seeds.get("bootstrap/lesioning/" + cname)));
      outputs.push_back(emit_series(c, s, provenance(c, "analyze lesion", bundle.manifest(), seeds.to_json())).string());
      details[cname] = {{"records", recs.size()}};
    }
  } else {
    const auto groups = group_by_concept(bundle.patches(), corpus, bundle_path,
                                         [](const auto& r) { return std::pair{r.pair_id, true}; });
    for (const auto& [category, recs] : groups) {
      const std::string cname(to_string(category));
      const auto prof = causal::patching_profile(recs, L, category,
                                                 boot(c, seeds.get("bootstrap/patching/" + cname)), c.patch_epsilon);
      const auto prov = provenance(c, "analyze patch", bundle.manifest(), seeds.to_json());
      for (const auto* s : {&prof.combined, &prof.attention, &prof.mlp}) outputs.push_back(emit_series(c, *s, prov).string());
      const auto csv = c.out / ("patching-" + cname + "-heatmap.csv");
      write_text(csv, causal::patching_heatmap_csv(prof));
      outputs.push_back(csv.string());
      const json summary = {{"success_fraction", optional_array(prof.success_fraction)},
                            {"success_fraction_attention", optional_array(prof.success_fraction_attention)},
                            {"success_fraction_mlp", optional_array(prof.success_fraction_mlp)},
                            {"degenerate", prof.degenerate},
                            {"degenerate_records", prof.degenerate_ids},
                            {"epsilon", c.patch_epsilon},
                            {"provenance", prov}};
      const auto sp = c.out / ("patching-" + cname + "-summary.json");
      write_json(sp, summary);
      outputs.push_back(sp.string());
      details[cname] = {{"records", recs.size()}, {"degenerate", prof.degenerate}};
    }
  }
  return {{"outputs", outputs}, {"concepts", details}, {"derived_seeds", seeds.to_json()}};
}

}  // namespace

PipelineConfig config_from_json(const json& j, PipelineConfig c) {
  try {
    check_keys(j,
               {"seed", "jobs", "out", "data", "corpus", "umap", "silhouette_dim", "plot_dim", "anisotropy_k",
                "silhouette_labels", "export_embeddings", "bootstrap_resamples", "patch_epsilon", "map", "judge"},
               "config");
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
    if (j.contains("out")) c.out = j["out"].get<std::string>();
    if (j.contains("data")) c.data_path = j["data"].get<std::string>();
    if (j.contains("corpus")) {
      const auto& k = j["corpus"];
      check_keys(k, {"concepts", "analyses", "subjects", "corpus_id"}, "corpus");
      c.corpus.concepts = k.value("concepts", c.corpus.concepts);
      c.corpus.analyses = k.value("analyses", c.corpus.analyses);
      c.corpus.subjects = k.value("subjects", c.corpus.subjects);
      c.corpus.corpus_id = k.value("corpus_id", c.corpus.corpus_id);
    }
    if (j.contains("umap")) {
      const auto& u = j["umap"];
      check_keys(u, {"n_neighbors", "min_dist", "n_epochs", "spread", "learning_rate", "repulsion_strength",
                     "negative_sample_rate"}, "umap");
      c.umap.n_neighbors = u.value("n_neighbors", c.umap.n_neighbors);
      c.umap.min_dist = u.value("min_dist", c.umap.min_dist);
      c.umap.n_epochs = u.value("n_epochs", c.umap.n_epochs);
      c.umap.spread = u.value("spread", c.umap.spread);
      c.umap.learning_rate = u.value("learning_rate", c.umap.learning_rate);
      c.umap.repulsion_strength = u.value("repulsion_strength", c.umap.repulsion_strength);
      c.umap.negative_sample_rate = u.value("negative_sample_rate", c.umap.negative_sample_rate);
    }
    c.silhouette_dim = j.value("silhouette_dim", c.silhouette_dim);
    c.plot_dim = j.value("plot_dim", c.plot_dim);
    c.anisotropy_k = j.value("anisotropy_k", c.anisotropy_k);
    if (j.contains("silhouette_labels")) {
      c.silhouette_labels.clear();
      for (const auto& [k, v] : j["silhouette_labels"].items())
        c.silhouette_labels[parse_concept(k)] = v.get<std::vector<std::string>>();
    }
    c.export_embeddings = j.value("export_embeddings", c.export_embeddings);
    c.bootstrap_resamples = j.value("bootstrap_resamples", c.bootstrap_resamples);
    c.patch_epsilon = j.value("patch_epsilon", c.patch_epsilon);
    if (j.contains("map")) {
      const auto& m = j["map"];
      check_keys(m, {"sigma", "window", "percentile", "min_len", "max_n", "formats"}, "map");
      c.map.sigma = m.value("sigma", c.map.sigma);
      c.map.window = m.value("window", c.map.window);
      c.map.percentile = m.value("percentile", c.map.percentile);
      c.map.min_len = m.value("min_len", c.map.min_len);
      c.map.max_n = m.value("max_n", c.map.max_n);
      c.map_formats = m.value("formats", c.map_formats);
    }
    if (j.contains("judge")) c.judge = judge::config_from_json(j["judge"]);
  } catch (const json::exception& e) {
    throw Error(kModule, std::string("invalid configuration: ") + e.what());
  }
  if (c.jobs < 1) throw Error(kModule, "jobs must be at least 1");
  if (c.bootstrap_resamples < 100) throw Error(kModule, "bootstrap_resamples must be at least 100");
  return c;
}

json cmd_gen_prompts(const PipelineConfig& c) {
  const fs::path data = c.data_path.empty() ? prompts::default_data_path() : c.data_path;
  require_exists(data, "prompt data file");
  if (c.out.empty()) throw Error(kModule, "--out is required");
  auto cfg = c.corpus;
  cfg.seed = c.seed;
  if (cfg.concepts.empty())
    for (Concept k : kAllConcepts) cfg.concepts.emplace_back(to_string(k));
  if (cfg.analyses.empty())
    for (Analysis a : kAllAnalyses) cfg.analyses.emplace_back(to_string(a));
  const auto corpus = prompts::build_corpus(cfg, prompts::load_corpus_data(data));
  const auto path = c.out / "corpus.json";
  prompts::write_corpus(corpus, path);

  json counts = json::object();
  for (const auto& p : corpus.prompts) {
    auto& slot = counts[std::string(to_string(p.category))][std::string(to_string(p.analysis))];
    slot = slot.is_null() ? 1 : slot.get<int>() + 1;
  }
  return {{"command", "gen-prompts"},
          {"corpus", path.string()},
          {"corpus_id", corpus.corpus_id},
          {"seed", c.seed},
          {"n_prompts", corpus.prompts.size()},
          {"counts", counts}};
}

json cmd_analyze(const PipelineConfig& c, Analysis a, const fs::path& corpus_path, const fs::path& bundle_path) {
  require_exists(corpus_path, "corpus");
  require_exists(bundle_path, "bundle");
  if (c.out.empty()) throw Error(kModule, "--out is required");

  const auto corpus = prompts::read_corpus(corpus_path);
  const auto bundle = trace::load_run(bundle_path);
  const auto& m = bundle.manifest();
  if (m.capture_kind != expected_kind(a))
    throw Error(kModule, "bundle holds " + std::string(trace::to_string(m.capture_kind)) + " records, analyze " +
                             std::string(to_string(a)) + " needs " + std::string(trace::to_string(expected_kind(a))),
                bundle_path.string());
  if (m.corpus_id != corpus.corpus_id)
    throw Error(kModule, "bundle was captured for corpus '" + m.corpus_id + "', not '" + corpus.corpus_id + "'",
                bundle_path.string());
  if (bundle.size() == 0) throw Error(kModule, "no records", bundle_path.string());
  fs::create_directories(c.out);

  json summary = a == Analysis::umap ? analyze_umap(c, corpus, bundle, bundle_path)
                                     : analyze_causal(c, a, corpus, bundle, bundle_path);
  summary["command"] = "analyze " + std::string(to_string(a));
  summary["seed"] = c.seed;
  summary["model_name"] = m.model_name;
  summary["n_layers"] = m.n_layers;
  return summary;
}

json cmd_judge(const PipelineConfig& c, const fs::path& bundle_path) {
  require_exists(bundle_path, "bundle");
  if (c.out.empty()) throw Error(kModule, "--out is required");
  const auto bundle = trace::load_run(bundle_path);
  if (bundle.manifest().capture_kind != trace::CaptureKind::lesion_responses)
    throw Error(kModule, "judge needs a lesion_responses bundle", bundle_path.string());
  if (fs::exists(c.out) && fs::equivalent(c.out, bundle.root()))
    throw Error(kModule, "output directory must differ from the input bundle", c.out.string());

  judge::JudgeClient client(c.judge);
  const auto result = client.score_batch(bundle.lesions());
  auto header = bundle.manifest();
  header.records.clear();
  trace::BundleWriter writer(c.out, header);
  for (const auto& r : result.records) writer.add(r);
  const auto manifest = writer.finish();

  json failures = json::array();
  for (const auto& f : result.failures)
    failures.push_back({{"index", f.index}, {"prompt_id", f.prompt_id}, {"layer", f.layer}, {"message", f.message}});
  return {{"command", "judge"},
          {"ok", result.failures.empty()},
          {"bundle", manifest.string()},
          {"records", result.records.size()},
          {"scored", result.scored},
          {"cache_hits", result.cache_hits},
          {"skipped", result.skipped},
          {"network_calls", client.network_calls()},
          {"failures", failures}};
}

json cmd_map(const PipelineConfig& c, const std::vector<fs::path>& reports) {
  if (reports.empty()) throw Error(kModule, "map needs at least one report directory or series file");
  for (const auto& r : reports) require_exists(r, "report");
  if (c.out.empty()) throw Error(kModule, "--out is required");
  for (const auto& f : c.map_formats)
    if (f != "svg" && f != "json") throw Error("cartographer", "unsupported map format '" + f + "'");

  std::vector<fs::path> files;
  for (const auto& r : reports) {
    if (fs::is_directory(r)) {
      for (const auto& e : fs::directory_iterator(r)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && name.rfind("series-", 0) == 0 && e.path().extension() == ".json")
          files.push_back(e.path());
      }
    } else {
      files.push_back(r);
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(kModule, "no series files found");

  std::vector<stats::MetricSeries> series;
  std::optional<std::string> model;
  std::optional<int> n_layers;
  for (const auto& f : files) {
    std::ifstream in(f);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(kModule, std::string("cannot parse series file: ") + e.what(), f.string());
    }
    if (!j.contains("provenance")) throw Error(kModule, "series file has no provenance block", f.string());
    const auto name = j["provenance"].value("model_name", std::string{});
    const int layers = j["provenance"].value("n_layers", 0);
    if (model && (*model != name || *n_layers != layers))
      throw Error(kModule, "series files come from different models or layer counts", f.string());
    model = name;
    n_layers = layers;
    try {
      series.push_back(stats::series_from_json(j));
    } catch (const Error& e) {
      throw Error(e.module(), e.detail(), f.string());
    }
  }

  const auto m = map::assemble_map(series, *model, *n_layers, c.map);
  fs::create_directories(c.out);
  json outputs = json::array();
  for (const auto& f : c.map_formats) {
    const auto path = c.out / ("map." + f);
    write_text(path, map::render_map(m, f));
    outputs.push_back(path.string());
  }
  json rows = json::array();
  for (const auto& r : m.rows) {
    json ivs = json::array();
    for (const auto& iv : r.intervals) ivs.push_back({iv.start, iv.end});
    rows.push_back({{"concept", to_string(r.category)}, {"source", to_string(r.source)}, {"intervals", ivs}});
  }
  return {{"command", "map"},
          {"model_name", m.model_name},
          {"n_layers", m.n_layers},
          {"series_files", files.size()},
          {"outputs", outputs},
          {"rows", rows},
          {"warnings", m.warnings}};
}

json error_json(const std::exception& e) {
  json err = {{"module", kModule}, {"message", e.what()}};
  if (const auto* le = dynamic_cast<const Error*>(&e)) {
    err["module"] = le->module();
    err["message"] = le->detail();
    if (!le->file().empty()) err["file"] = le->file();
    if (!le->record().empty()) err["record"] = le->record();
  }
  if (const auto* te = dynamic_cast<const trace::TraceError*>(&e)) err["code"] = trace::to_string(te->code());
  return {{"error", err}};
}

}  // namespace llmmap::pipeline
