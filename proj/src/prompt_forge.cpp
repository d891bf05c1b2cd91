#include "llmmap/prompt_forge.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace llmmap::prompts {

namespace {

constexpr const char* kModule = "prompt-forge";

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Calls on_text for literal runs and on_placeholder for every {NAME} token.
template <class OnText, class OnPlaceholder>
void scan(std::string_view text, OnText&& on_text, OnPlaceholder&& on_placeholder) {
  std::size_t i = 0;
  std::size_t literal_start = 0;
  while (i < text.size()) {
    if (text[i] == '{' && i + 1 < text.size() && is_ident_start(text[i + 1])) {
      std::size_t j = i + 1;
      while (j < text.size() && is_ident_char(text[j])) ++j;
      if (j < text.size() && text[j] == '}') {
        on_text(text.substr(literal_start, i - literal_start));
        on_placeholder(text.substr(i + 1, j - i - 1));
        i = j + 1;
        literal_start = i;
        continue;
      }
    }
    ++i;
  }
  on_text(text.substr(literal_start));
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw Error(kModule, "cannot format number");
  return std::string(buf, end);
}

double round_significant(double v, int digits) {
  if (v == 0.0) return 0.0;
  const double magnitude = std::pow(10.0, digits - 1 - static_cast<int>(std::floor(std::log10(std::fabs(v)))));
  return std::round(v * magnitude) / magnitude;
}

Labels labels_from_json(const nlohmann::json& j) {
  Labels out;
  if (j.is_null()) return out;
  if (!j.is_object()) throw Error(kModule, "labels must be a JSON object");
  for (const auto& [k, v] : j.items()) out[k] = label_from_json(v);
  return out;
}

std::vector<std::string> strings_from_json(const nlohmann::json& j) {
  std::vector<std::string> out;
  if (j.is_null()) return out;
  for (const auto& s : j) out.push_back(s.get<std::string>());
  return out;
}

SubstitutionValue value_from_json(const nlohmann::json& j) {
  if (j.is_string()) return SubstitutionValue::plain(j.get<std::string>());
  if (j.is_number_integer()) return SubstitutionValue::plain(std::to_string(j.get<std::int64_t>()));
  if (j.is_number()) return SubstitutionValue::plain(format_number(j.get<double>()));
  if (!j.is_object() || !j.contains("text")) throw Error(kModule, "substitution value needs a 'text' field");
  SubstitutionValue v;
  v.text = j.at("text").get<std::string>();
  v.labels = labels_from_json(j.value("labels", nlohmann::json()));
  if (j.contains("corrupt_text")) v.corrupt_text = j.at("corrupt_text").get<std::string>();
  v.corrupt_labels = labels_from_json(j.value("corrupt_labels", nlohmann::json()));
  v.answers = strings_from_json(j.value("answers", nlohmann::json()));
  v.corrupt_answers = strings_from_json(j.value("corrupt_answers", nlohmann::json()));
  return v;
}

std::vector<SubstitutionValue> sweep_values(const nlohmann::json& spec, const std::string& placeholder) {
  const double lo = spec.at("min").get<double>();
  const double hi = spec.at("max").get<double>();
  const int count = spec.at("count").get<int>();
  const std::string scale = spec.value("scale", "log");
  const std::string unit = spec.value("unit", "");
  if (count < 1 || !(lo > 0.0) || !(hi >= lo)) throw Error(kModule, "invalid dose sweep for " + placeholder);
  std::vector<SubstitutionValue> out;
  for (int i = 0; i < count; ++i) {
    const double t = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    const double raw = scale == "linear" ? lo + t * (hi - lo) : lo * std::pow(hi / lo, t);
    const double dose = round_significant(raw, 3);
    SubstitutionValue v = SubstitutionValue::plain(format_number(dose));
    v.labels[lower(placeholder)] = dose;
    if (!unit.empty()) v.labels["unit"] = unit;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<SubstitutionValue> resolve_substitution(const CorpusData& data, const std::string& placeholder,
                                                    const nlohmann::json& spec) {
  if (spec.is_string()) {
    auto it = data.lists.find(spec.get<std::string>());
    if (it == data.lists.end())
      throw Error(kModule, "placeholder " + placeholder + " references unknown list '" + spec.get<std::string>() + "'");
    return it->second;
  }
  if (spec.is_array()) {
    std::vector<SubstitutionValue> out;
    for (const auto& v : spec) out.push_back(value_from_json(v));
    return out;
  }
  if (spec.is_object() && spec.contains("range")) {
    const auto lo = spec.at("range").at(0).get<std::int64_t>();
    const auto hi = spec.at("range").at(1).get<std::int64_t>();
    std::vector<SubstitutionValue> out;
    for (auto a = lo; a <= hi; ++a) out.push_back(SubstitutionValue::plain(std::to_string(a)));
    return out;
  }
  if (spec.is_object() && spec.contains("sweep")) return sweep_values(spec.at("sweep"), placeholder);
  throw Error(kModule, "unsupported substitution spec for placeholder " + placeholder);
}

std::string slug(std::string_view text) {
  std::string out;
  for (unsigned char c : text) {
    if (std::isalnum(c))
      out += static_cast<char>(std::tolower(c));
    else if (!out.empty() && out.back() != '_')
      out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

nlohmann::json schema_for(const std::vector<LabelValue>& values) {
  bool all_int = true, all_num = true;
  for (const auto& v : values) {
    all_int = all_int && std::holds_alternative<std::int64_t>(v);
    all_num = all_num && !std::holds_alternative<std::string>(v);
  }
  auto as_double = [](const LabelValue& v) {
    return std::holds_alternative<std::int64_t>(v) ? static_cast<double>(std::get<std::int64_t>(v))
                                                   : std::get<double>(v);
  };
  if (all_int) {
    std::int64_t lo = std::get<std::int64_t>(values.front()), hi = lo;
    for (const auto& v : values) {
      lo = std::min(lo, std::get<std::int64_t>(v));
      hi = std::max(hi, std::get<std::int64_t>(v));
    }
    return {{"type", "integer"}, {"min", lo}, {"max", hi}};
  }
  if (all_num) {
    double lo = as_double(values.front()), hi = lo;
    for (const auto& v : values) {
      lo = std::min(lo, as_double(v));
      hi = std::max(hi, as_double(v));
    }
    return {{"type", "number"}, {"min", lo}, {"max", hi}};
  }
  std::set<std::string> cats;
  for (const auto& v : values) {
    if (const auto* s = std::get_if<std::string>(&v))
      cats.insert(*s);
    else
      cats.insert(label_to_json(v).dump());
  }
  return {{"type", "categorical"}, {"values", std::vector<std::string>(cats.begin(), cats.end())}};
}

nlohmann::json compute_label_schemas(const std::vector<PromptRecord>& prompts) {
  std::map<std::string, std::vector<LabelValue>> by_key;
  for (const auto& p : prompts)
    for (const auto& [k, v] : p.labels) by_key[k].push_back(v);
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [k, vals] : by_key) out[k] = schema_for(vals);
  return out;
}

}  // namespace

SubstitutionValue SubstitutionValue::plain(std::string text) {
  SubstitutionValue v;
  v.text = std::move(text);
  return v;
}

const PromptRecord* CorpusManifest::find(std::string_view prompt_id) const {
  for (const auto& p : prompts)
    if (p.prompt_id == prompt_id) return &p;
  return nullptr;
}

std::vector<std::string> placeholders(std::string_view text) {
  std::set<std::string> names;
  scan(text, [](std::string_view) {}, [&](std::string_view name) { names.emplace(name); });
  return {names.begin(), names.end()};
}

std::string render(std::string_view text, const std::map<std::string, std::string>& values) {
  std::string out;
  scan(
      text, [&](std::string_view lit) { out += lit; },
      [&](std::string_view name) {
        auto it = values.find(std::string(name));
        if (it == values.end()) throw Error(kModule, "no value for placeholder '" + std::string(name) + "'");
        out += it->second;
      });
  return out;
}

LabelValue scalar_label(std::string_view text) {
  if (!text.empty()) {
    std::int64_t i = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), i);
    if (ec == std::errc{} && p == text.data() + text.size()) return i;
    double d = 0.0;
    auto [pd, ecd] = std::from_chars(text.data(), text.data() + text.size(), d);
    if (ecd == std::errc{} && pd == text.data() + text.size() && std::isfinite(d)) return d;
  }
  return std::string(text);
}

std::vector<PromptRecord> expand_template(const PromptTemplate& tmpl, const Substitutions& substitutions) {
  const bool patching = tmpl.analysis == Analysis::patching;
  if (patching && !tmpl.corrupt_text)
    throw Error(kModule, "patching template '" + tmpl.id + "' has no corrupt variant");
  if (!patching && tmpl.corrupt_text)
    throw Error(kModule, "only patching templates may carry a corrupt variant ('" + tmpl.id + "')");

  std::set<std::string> used;
  for (auto& n : placeholders(tmpl.text)) used.insert(n);
  if (tmpl.corrupt_text)
    for (auto& n : placeholders(*tmpl.corrupt_text)) used.insert(n);

  // std::set iterates lexicographically; the first placeholder varies slowest.
  std::vector<const std::vector<SubstitutionValue>*> lists;
  std::vector<std::string> names(used.begin(), used.end());
  std::size_t total = 1;
  for (const auto& name : names) {
    auto it = substitutions.find(name);
    if (it == substitutions.end())
      throw Error(kModule, "missing substitution for placeholder '" + name + "'", {}, tmpl.id);
    if (it->second.empty())
      throw Error(kModule, "empty value list for placeholder '" + name + "'", {}, tmpl.id);
    lists.push_back(&it->second);
    total *= it->second.size();
  }

  std::vector<PromptRecord> out;
  out.reserve(patching ? 2 * total : total);
  std::vector<std::size_t> choice(names.size(), 0);
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::size_t rem = idx;
    for (std::size_t k = names.size(); k-- > 0;) {
      choice[k] = rem % lists[k]->size();
      rem /= lists[k]->size();
    }

    std::map<std::string, std::string> clean_vals, corrupt_vals;
    Labels clean_labels = tmpl.labels, corrupt_labels = tmpl.labels;
    std::vector<std::string> clean_answers, corrupt_answers;
    for (std::size_t k = 0; k < names.size(); ++k) {
      const SubstitutionValue& v = (*lists[k])[choice[k]];
      const std::string key = lower(names[k]);
      clean_vals[names[k]] = v.text;
      clean_labels[key] = scalar_label(v.text);
      for (const auto& [lk, lv] : v.labels) clean_labels[lk] = lv;
      clean_answers.insert(clean_answers.end(), v.answers.begin(), v.answers.end());
      if (patching) {
        const std::string& ct = v.corrupt_text ? *v.corrupt_text : v.text;
        corrupt_vals[names[k]] = ct;
        corrupt_labels[key] = scalar_label(ct);
        for (const auto& [lk, lv] : v.labels) corrupt_labels[lk] = lv;
        for (const auto& [lk, lv] : v.corrupt_labels) corrupt_labels[lk] = lv;
        corrupt_answers.insert(corrupt_answers.end(), v.corrupt_answers.begin(), v.corrupt_answers.end());
      }
    }
    if (clean_answers.empty()) clean_answers = tmpl.expected_answers;

    const std::string base_id = tmpl.id + "." + std::to_string(idx);
    if (!patching) {
      out.push_back(PromptRecord{base_id, tmpl.category, tmpl.analysis, render(tmpl.text, clean_vals),
                                 std::move(clean_labels), std::move(clean_answers), std::nullopt});
      continue;
    }
    if (corrupt_answers.empty()) corrupt_answers = tmpl.corrupt_expected_answers;
    if (clean_answers.empty() || corrupt_answers.empty() || clean_answers == corrupt_answers)
      throw Error(kModule, "patching pair needs non-empty, distinct expected answers", {}, base_id);
    out.push_back(PromptRecord{base_id + ".clean", tmpl.category, tmpl.analysis, render(tmpl.text, clean_vals),
                               std::move(clean_labels), std::move(clean_answers), base_id});
    out.push_back(PromptRecord{base_id + ".corrupt", tmpl.category, tmpl.analysis,
                               render(*tmpl.corrupt_text, corrupt_vals), std::move(corrupt_labels),
                               std::move(corrupt_answers), base_id});
  }
  return out;
}

CorpusData parse_corpus_data(const nlohmann::json& doc) {
  CorpusData data;
  try {
    for (const auto& [name, items] : doc.at("lists").items()) {
      auto& values = data.lists[name];
      auto& raw = data.raw_lists[name];
      for (const auto& item : items) {
        values.push_back(value_from_json(item));
        raw.push_back(item);
      }
    }
    for (const auto& t : doc.at("templates")) {
      TemplateSpec spec;
      spec.tmpl.id = t.at("id").get<std::string>();
      spec.tmpl.category = parse_concept(t.at("concept").get<std::string>());
      spec.tmpl.analysis = parse_analysis(t.at("analysis").get<std::string>());
      spec.tmpl.text = t.at("text").get<std::string>();
      spec.tmpl.expected_answers = strings_from_json(t.value("expected_answers", nlohmann::json()));
      if (t.contains("corrupt_text")) spec.tmpl.corrupt_text = t.at("corrupt_text").get<std::string>();
      spec.tmpl.corrupt_expected_answers = strings_from_json(t.value("corrupt_expected_answers", nlohmann::json()));
      spec.tmpl.labels = labels_from_json(t.value("labels", nlohmann::json()));
      if (t.contains("substitutions"))
        for (const auto& [ph, s] : t.at("substitutions").items()) spec.substitutions[ph] = s;
      if (t.contains("for_each")) {
        spec.for_each_list = t.at("for_each").at("list").get<std::string>();
        spec.for_each_placeholder = t.at("for_each").at("placeholder").get<std::string>();
        spec.for_each_field = t.at("for_each").value("field", "substitutions");
      }
      data.templates.push_back(std::move(spec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(kModule, std::string("malformed corpus data: ") + e.what());
  }
  for (const auto& spec : data.templates)
    if (spec.for_each_list && !data.raw_lists.count(*spec.for_each_list))
      throw Error(kModule, "for_each references unknown list '" + *spec.for_each_list + "'", {}, spec.tmpl.id);
  return data;
}

CorpusData load_corpus_data(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(kModule, "cannot open corpus data file", path.string());
  try {
    return parse_corpus_data(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(kModule, std::string("invalid JSON: ") + e.what(), path.string());
  }
}

std::filesystem::path default_data_path() {
  if (const char* env = std::getenv("LLMMAP_DATA")) return env;
#ifdef LLMMAP_DATA_DIR
  return std::filesystem::path(LLMMAP_DATA_DIR) / "corpus_defaults.json";
#else
  return "data/corpus_defaults.json";
#endif
}

CorpusManifest build_corpus(const CorpusConfig& config, const CorpusData& data) {
  if (config.concepts.empty()) throw Error(kModule, "corpus configuration names no concept");
  if (config.analyses.empty()) throw Error(kModule, "corpus configuration names no analysis");
  std::set<Concept> concepts;
  std::set<Analysis> analyses;
  for (const auto& c : config.concepts) concepts.insert(parse_concept(c));
  for (const auto& a : config.analyses) analyses.insert(parse_analysis(a));
  const std::set<std::string> subjects(config.subjects.begin(), config.subjects.end());

  CorpusManifest manifest;
  manifest.corpus_id = config.corpus_id;
  manifest.seed = config.seed;

  auto keep = [&](const PromptRecord& r) {
    if (subjects.empty() || r.category != Concept::age) return true;
    auto it = r.labels.find("gender");
    if (it == r.labels.end()) return true;
    const auto* g = std::get_if<std::string>(&it->second);
    return g && subjects.count(*g) > 0;
  };
  auto append = [&](const PromptTemplate& tmpl, const Substitutions& subs) {
    for (auto& r : expand_template(tmpl, subs))
      if (keep(r)) manifest.prompts.push_back(std::move(r));
  };

  for (const auto& spec : data.templates) {
    if (!concepts.count(spec.tmpl.category) || !analyses.count(spec.tmpl.analysis)) continue;
    Substitutions subs;
    for (const auto& [ph, s] : spec.substitutions) subs[ph] = resolve_substitution(data, ph, s);
    if (!spec.for_each_list) {
      append(spec.tmpl, subs);
      continue;
    }
    for (const auto& item : data.raw_lists.at(*spec.for_each_list)) {
      PromptTemplate tmpl = spec.tmpl;
      Substitutions item_subs = subs;
      SubstitutionValue v = value_from_json(item);
      tmpl.id += "-" + slug(v.text);
      item_subs[spec.for_each_placeholder] = {v};
      if (item.is_object() && item.contains(spec.for_each_field))
        for (const auto& [ph, s] : item.at(spec.for_each_field).items())
          item_subs[ph] = resolve_substitution(data, ph, s);
      append(tmpl, item_subs);
    }
  }

  if (manifest.prompts.empty()) throw Error(kModule, "configuration selects no prompt templates");
  std::set<std::string> ids;
  for (const auto& p : manifest.prompts)
    if (!ids.insert(p.prompt_id).second) throw Error(kModule, "duplicate prompt id", {}, p.prompt_id);
  manifest.label_schemas = compute_label_schemas(manifest.prompts);
  return manifest;
}

nlohmann::json label_to_json(const LabelValue& v) {
  return std::visit([](const auto& x) { return nlohmann::json(x); }, v);
}

LabelValue label_from_json(const nlohmann::json& j) {
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  throw Error(kModule, "label values must be numbers or strings");
}

nlohmann::json to_json(const PromptRecord& r) {
  nlohmann::json labels = nlohmann::json::object();
  for (const auto& [k, v] : r.labels) labels[k] = label_to_json(v);
  nlohmann::json j = {{"prompt_id", r.prompt_id},
                      {"concept", to_string(r.category)},
                      {"analysis", to_string(r.analysis)},
                      {"text", r.text},
                      {"labels", labels},
                      {"expected_answers", r.expected_answers}};
  if (r.pair_id) j["pair_id"] = *r.pair_id;
  return j;
}

PromptRecord record_from_json(const nlohmann::json& j) {
  PromptRecord r;
  r.prompt_id = j.at("prompt_id").get<std::string>();
  r.category = parse_concept(j.at("concept").get<std::string>());
  r.analysis = parse_analysis(j.at("analysis").get<std::string>());
  r.text = j.at("text").get<std::string>();
  r.labels = labels_from_json(j.value("labels", nlohmann::json()));
  r.expected_answers = strings_from_json(j.value("expected_answers", nlohmann::json()));
  if (j.contains("pair_id")) r.pair_id = j.at("pair_id").get<std::string>();
  return r;
}

nlohmann::json to_json(const CorpusManifest& m) {
  nlohmann::json prompts = nlohmann::json::array();
  for (const auto& p : m.prompts) prompts.push_back(to_json(p));
  return {{"schema", "llmmap.corpus/1"},
          {"corpus_id", m.corpus_id},
          {"seed", m.seed},
          {"label_schemas", m.label_schemas},
          {"prompts", prompts}};
}

CorpusManifest corpus_from_json(const nlohmann::json& j) {
  try {
    CorpusManifest m;
    m.corpus_id = j.at("corpus_id").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.label_schemas = j.value("label_schemas", nlohmann::json::object());
    for (const auto& p : j.at("prompts")) m.prompts.push_back(record_from_json(p));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(kModule, std::string("malformed corpus manifest: ") + e.what());
  }
}

std::string serialize(const CorpusManifest& m) { return to_json(m).dump(2) + "\n"; }

void write_corpus(const CorpusManifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(kModule, "cannot write corpus manifest", path.string());
  out << serialize(m);
}

CorpusManifest read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(kModule, "cannot open corpus manifest", path.string());
  try {
    return corpus_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(kModule, std::string("invalid JSON: ") + e.what(), path.string());
  }
}

}  // namespace llmmap::prompts
