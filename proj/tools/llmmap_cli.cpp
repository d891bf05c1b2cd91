#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "llmmap/pipeline.hpp"

namespace fs = std::filesystem;
using llmmap::pipeline::PipelineConfig;

int main(int argc, char** argv) {
  CLI::App app{"llmmap: layer maps of where a language model processes medical concepts"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::string out;
  app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Top-level seed; per-stage seeds are derived from it");
  auto* jobs_opt = app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  auto* out_opt = app.add_option("--out", out, "Output directory");

  auto* gen = app.add_subcommand("gen-prompts", "Generate the prompt corpus");
  std::string data;
  std::vector<std::string> concepts, analyses, subjects;
  std::string corpus_id;
  auto* data_opt = gen->add_option("--data", data, "Substitution-list data file")->check(CLI::ExistingFile);
  auto* concepts_opt = gen->add_option("--concepts", concepts, "Concepts to include (default: all)")->delimiter(',');
  auto* analyses_opt = gen->add_option("--analyses", analyses, "Analyses to include (default: all)")->delimiter(',');
  auto* subjects_opt = gen->add_option("--subjects", subjects, "Age-prompt subjects to keep")->delimiter(',');
  auto* corpus_id_opt = gen->add_option("--corpus-id", corpus_id, "Corpus identifier");

  auto* analyze = app.add_subcommand("analyze", "Compute per-layer metric series from a trace bundle");
  std::string analysis, corpus, bundle;
  analyze->add_option("analysis", analysis, "umap | saliency | lesion | patch")
      ->required()
      ->check(CLI::IsMember({"umap", "saliency", "lesion", "patch"}));
  analyze->add_option("--corpus", corpus, "Corpus manifest")->required();
  analyze->add_option("--bundle", bundle, "Trace bundle directory or manifest")->required();
  int bootstrap = 0;
  auto* boot_opt = analyze->add_option("--bootstrap", bootstrap, "Bootstrap resamples")->check(CLI::Range(100, 1000000));

  auto* judge = app.add_subcommand("judge", "Score lesion transcripts with an LLM judge");
  std::string judge_bundle, endpoint, model;
  judge->add_option("--bundle", judge_bundle, "Lesion bundle")->required();
  auto* endpoint_opt = judge->add_option("--endpoint", endpoint, "Chat-completions URL");
  auto* model_opt = judge->add_option("--model", model, "Judge model identifier");

  auto* map = app.add_subcommand("map", "Assemble and render the layer map");
  std::vector<std::string> reports;
  map->add_option("--reports", reports, "Report directories or series files")->required();
  std::vector<std::string> formats;
  auto* formats_opt = map->add_option("--format", formats, "svg and/or json")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    PipelineConfig cfg;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw llmmap::Error("cli", std::string("cannot parse configuration: ") + e.what(), config_path);
      }
      cfg = llmmap::pipeline::config_from_json(j);
    }
    if (seed_opt->count()) cfg.seed = seed;
    if (jobs_opt->count()) cfg.jobs = jobs;
    if (out_opt->count()) cfg.out = out;
    if (data_opt->count()) cfg.data_path = data;
    if (concepts_opt->count()) cfg.corpus.concepts = concepts;
    if (analyses_opt->count()) cfg.corpus.analyses = analyses;
    if (subjects_opt->count()) cfg.corpus.subjects = subjects;
    if (corpus_id_opt->count()) cfg.corpus.corpus_id = corpus_id;
    if (boot_opt->count()) cfg.bootstrap_resamples = bootstrap;
    if (endpoint_opt->count()) cfg.judge.endpoint = endpoint;
    if (model_opt->count()) cfg.judge.model = model;
    if (formats_opt->count()) cfg.map_formats = formats;

    nlohmann::json summary;
    if (*gen) {
      summary = llmmap::pipeline::cmd_gen_prompts(cfg);
    } else if (*analyze) {
      summary = llmmap::pipeline::cmd_analyze(cfg, llmmap::parse_analysis(analysis), corpus, bundle);
    } else if (*judge) {
      cfg.judge.validate();
      summary = llmmap::pipeline::cmd_judge(cfg, judge_bundle);
    } else {
      std::vector<fs::path> paths(reports.begin(), reports.end());
      summary = llmmap::pipeline::cmd_map(cfg, paths);
    }
    std::cout << summary.dump(2) << '\n';
    return summary.value("ok", true) ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << llmmap::pipeline::error_json(e).dump(2) << '\n';
    return 1;
  }
}
