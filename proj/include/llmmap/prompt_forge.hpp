#pragma once

// Prompt corpus generation. Templates use curly-brace named placeholders
// ("He is {AGE} years old.") and are expanded over the Cartesian product of
// their substitution lists.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "llmmap/common.hpp"

namespace llmmap::prompts {

using LabelValue = std::variant<std::int64_t, double, std::string>;
using Labels = std::map<std::string, LabelValue>;

/// One candidate value for a placeholder.
///
/// Patching templates substitute `corrupt_text` (falling back to `text`) into the corrupt
/// variant. `answers` / `corrupt_answers`, when set, replace the template's expected answers
/// for records that use this value.
struct SubstitutionValue {
  std::string text;
  Labels labels;
  std::optional<std::string> corrupt_text;
  Labels corrupt_labels;
  std::vector<std::string> answers;
  std::vector<std::string> corrupt_answers;

  static SubstitutionValue plain(std::string text);
};

using Substitutions = std::map<std::string, std::vector<SubstitutionValue>>;

struct PromptTemplate {
  std::string id;
  Concept category = Concept::age;
  Analysis analysis = Analysis::umap;
  std::string text;
  std::vector<std::string> expected_answers;
  std::optional<std::string> corrupt_text;
  std::vector<std::string> corrupt_expected_answers;
  Labels labels;  // fixed labels attached to every expanded record
};

struct PromptRecord {
  std::string prompt_id;
  Concept category = Concept::age;
  Analysis analysis = Analysis::umap;
  std::string text;
  Labels labels;
  std::vector<std::string> expected_answers;
  std::optional<std::string> pair_id;

  bool operator==(const PromptRecord&) const = default;
};

struct CorpusManifest {
  std::string corpus_id;
  std::uint64_t seed = 0;
  std::vector<PromptRecord> prompts;
  nlohmann::json label_schemas = nlohmann::json::object();

  const PromptRecord* find(std::string_view prompt_id) const;
  bool operator==(const CorpusManifest&) const = default;
};

/// Sorted, de-duplicated placeholder names appearing in `text`.
std::vector<std::string> placeholders(std::string_view text);

/// Replaces every placeholder; throws naming the first placeholder without a value.
std::string render(std::string_view text, const std::map<std::string, std::string>& values);

/// Scalar label for a raw substitution string: integers and decimals become numbers.
LabelValue scalar_label(std::string_view text);

std::vector<PromptRecord> expand_template(const PromptTemplate& tmpl, const Substitutions& substitutions);

/// A template as declared in the corpus data file, before list references are resolved.
struct TemplateSpec {
  PromptTemplate tmpl;
  std::map<std::string, nlohmann::json> substitutions;
  std::optional<std::string> for_each_list;
  std::string for_each_placeholder;
  std::string for_each_field = "substitutions";  // per-item substitution lists
};

/// Parsed corpus data file: named substitution lists and template declarations.
struct CorpusData {
  std::map<std::string, std::vector<SubstitutionValue>> lists;
  std::map<std::string, std::vector<nlohmann::json>> raw_lists;
  std::vector<TemplateSpec> templates;
};

CorpusData parse_corpus_data(const nlohmann::json& doc);
CorpusData load_corpus_data(const std::filesystem::path& path);

/// Location of the data file shipped with the toolkit.
std::filesystem::path default_data_path();

struct CorpusConfig {
  std::vector<std::string> concepts;
  std::vector<std::string> analyses;
  std::vector<std::string> subjects;  // age only; empty keeps all
  std::string corpus_id = "medical-corpus";
  std::uint64_t seed = 0;
};

CorpusManifest build_corpus(const CorpusConfig& config, const CorpusData& data);

nlohmann::json label_to_json(const LabelValue& v);
LabelValue label_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PromptRecord& r);
PromptRecord record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CorpusManifest& m);
CorpusManifest corpus_from_json(const nlohmann::json& j);

/// Canonical serialized form (stable key order, 2-space indent, trailing newline).
std::string serialize(const CorpusManifest& m);
void write_corpus(const CorpusManifest& m, const std::filesystem::path& path);
CorpusManifest read_corpus(const std::filesystem::path& path);

}  // namespace llmmap::prompts
