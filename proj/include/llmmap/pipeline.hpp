#pragma once

// End-to-end commands behind the command-line tool. Each command validates its inputs,
// writes its outputs under the output directory, and returns a JSON summary.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "llmmap/cartographer.hpp"
#include "llmmap/judge_client.hpp"
#include "llmmap/manifold.hpp"
#include "llmmap/prompt_forge.hpp"
#include "llmmap/stats.hpp"

namespace llmmap::pipeline {

struct PipelineConfig {
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::filesystem::path out;

  std::filesystem::path data_path;  // prompt data file; empty uses the installed default
  prompts::CorpusConfig corpus;

  manifold::UmapParams umap;
  int silhouette_dim = 30;
  int plot_dim = 2;
  int anisotropy_k = 20;
  /// Label keys used for silhouette per concept; the first key is the primary series.
  std::map<Concept, std::vector<std::string>> silhouette_labels = {
      {Concept::symptoms, {"group"}},
      {Concept::diseases, {"specialty"}},
      {Concept::progression, {"disease"}},
      {Concept::drugs, {"specialty", "mechanism"}},
  };
  bool export_embeddings = true;

  int bootstrap_resamples = 1000;
  double patch_epsilon = 1e-6;
  map::MapParams map;
  std::vector<std::string> map_formats = {"svg", "json"};

  judge::JudgeConfig judge;
};

/// Applies the keys present in `j` on top of `base`. Unknown keys are an error.
PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig base = {});

nlohmann::json cmd_gen_prompts(const PipelineConfig& config);

nlohmann::json cmd_analyze(const PipelineConfig& config, Analysis analysis, const std::filesystem::path& corpus,
                           const std::filesystem::path& bundle);

/// Scores the lesion records of `bundle` and writes a scored copy of the bundle to config.out.
nlohmann::json cmd_judge(const PipelineConfig& config, const std::filesystem::path& bundle);

/// Reads every series-*.json file in `reports` (directories or files) and renders the map.
nlohmann::json cmd_map(const PipelineConfig& config, const std::vector<std::filesystem::path>& reports);

/// Structured form of an error for the CLI.
nlohmann::json error_json(const std::exception& e);

}  // namespace llmmap::pipeline
