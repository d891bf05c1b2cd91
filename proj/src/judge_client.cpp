#include "llmmap/judge_client.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <thread>

#include <httplib.h>

namespace llmmap::judge {

namespace {

constexpr const char* kModule = "judge-client";

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Converts a matched number; nullopt for a fractional value, throws when out of range.
std::optional<int> to_score(const std::string& token) {
  const auto dot = token.find('.');
  if (dot != std::string::npos &&
      token.find_first_not_of('0', dot + 1) != std::string::npos)
    return std::nullopt;
  const std::string whole = token.substr(0, dot);
  const bool negative = !whole.empty() && whole[0] == '-';
  const std::string digits = negative ? whole.substr(1) : whole;
  const auto first = digits.find_first_not_of('0');
  const std::string trimmed = first == std::string::npos ? "0" : digits.substr(first);
  if (trimmed.size() > 6 || negative)
    throw Error(kModule, "judge score " + token + " outside 1..10");
  const int v = std::stoi(trimmed);
  if (v < 1 || v > 10) throw Error(kModule, "judge score " + token + " outside 1..10");
  return v;
}

void blank(std::string& s, std::size_t pos, std::size_t len) { s.replace(pos, len, std::string(len, ' ')); }

}  // namespace

const char* const kDefaultRubric =
    "You are grading how much a language model's answer degraded after one of its internal layers was "
    "disabled.\n"
    "Prompt: {PROMPT}\n"
    "Original response:\n{ORIGINAL}\n\n"
    "Altered response:\n{LESIONED}\n\n"
    "Rate the degradation of the altered response relative to the original on an integer scale from 1 to 10. "
    "Use 1 when the altered response is not degraded at all compared with the original, and 10 when it is "
    "completely degraded, for example meaningless gibberish.\n"
    "Answer with the integer score first, then a short justification.";

const char* const kStrictFollowUp =
    "Your previous reply did not contain a usable score. Reply with one integer from 1 to 10 and nothing else.";

void JudgeConfig::validate() const {
  if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0)
    throw Error(kModule, "endpoint must start with http:// or https://: " + endpoint);
  if (model.empty()) throw Error(kModule, "model identifier is empty");
  if (rubric.find("{ORIGINAL}") == std::string::npos || rubric.find("{LESIONED}") == std::string::npos)
    throw Error(kModule, "rubric must contain {ORIGINAL} and {LESIONED}");
  if (max_concurrency < 1) throw Error(kModule, "max_concurrency must be at least 1");
  if (retry_limit < 1) throw Error(kModule, "retry_limit must be at least 1");
  if (!(timeout_seconds > 0.0)) throw Error(kModule, "timeout must be positive");
  if (backoff_ms < 0) throw Error(kModule, "backoff_ms must be non-negative");
}

JudgeConfig config_from_json(const nlohmann::json& j) {
  JudgeConfig c;
  try {
    c.endpoint = j.value("endpoint", c.endpoint);
    c.model = j.value("model", c.model);
    c.rubric = j.value("rubric", c.rubric);
    c.max_concurrency = j.value("max_concurrency", c.max_concurrency);
    c.retry_limit = j.value("retry_limit", c.retry_limit);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.backoff_ms = j.value("backoff_ms", c.backoff_ms);
    c.cache_path = j.value("cache_path", c.cache_path);
    c.include_prompt = j.value("include_prompt", c.include_prompt);
  } catch (const nlohmann::json::exception& e) {
    throw Error(kModule, std::string("invalid judge config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const JudgeConfig& c) {
  return {{"endpoint", c.endpoint},     {"model", c.model},
          {"rubric", c.rubric},         {"max_concurrency", c.max_concurrency},
          {"retry_limit", c.retry_limit}, {"timeout_seconds", c.timeout_seconds},
          {"api_key_env", c.api_key_env}, {"backoff_ms", c.backoff_ms},
          {"cache_path", c.cache_path}, {"include_prompt", c.include_prompt}};
}

std::optional<int> parse_score(std::string_view reply) {
  const std::string text = lowercase(reply);
  static const std::string num = R"((-?\d+(?:\.\d+)?))";
  static const std::regex over_ten(num + R"(\s*/\s*10(?!\d|\.\d))");
  static const std::regex out_of(num + R"(\s+out\s+of\s+10(?!\d|\.\d))");
  static const std::regex labelled(R"((?:score|rating)[^a-z0-9\-]{0,6}(?:is|of|=)?[^a-z0-9\-]{0,6})" + num);
  static const std::regex scale(R"((?:0|1)\s*(?:-|\xE2\x80\x93|to)\s*10(?!\d|\.\d))");

  std::smatch m;
  if (std::regex_search(text, m, over_ten)) return to_score(m[1].str());
  if (std::regex_search(text, m, out_of)) return to_score(m[1].str());

  // Mask scale mentions before the labelled and bare-number searches.
  std::string masked = text;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), scale); it != std::sregex_iterator(); ++it)
    blank(masked, static_cast<std::size_t>(it->position()), static_cast<std::size_t>(it->length()));

  if (std::regex_search(masked, m, labelled)) return to_score(m[1].str());

  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(masked[i]))) continue;
    std::size_t start = i;
    if (i > 0 && masked[i - 1] == '-' && (i < 2 || !std::isalnum(static_cast<unsigned char>(masked[i - 2])))) --start;
    std::size_t end = i;
    while (end < masked.size() && std::isdigit(static_cast<unsigned char>(masked[end]))) ++end;
    if (end + 1 < masked.size() && masked[end] == '.' && std::isdigit(static_cast<unsigned char>(masked[end + 1]))) {
      ++end;
      while (end < masked.size() && std::isdigit(static_cast<unsigned char>(masked[end]))) ++end;
    }
    return to_score(masked.substr(start, end - start));
  }
  return std::nullopt;
}

JudgeClient::JudgeClient(JudgeConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto scheme_end = config_.endpoint.find("://") + 3;
  const auto slash = config_.endpoint.find('/', scheme_end);
  scheme_host_port_ = config_.endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : config_.endpoint.substr(slash);

  if (config_.cache_path.empty()) return;
  std::ifstream in(config_.cache_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto key = nlohmann::json::array({j.at("model"), j.at("request")}).dump();
      cache_[key] = Verdict{j.at("score").get<int>(), j.at("raw_reply").get<std::string>(), true};
    } catch (const nlohmann::json::exception& e) {
      throw Error(kModule, std::string("corrupt cache entry: ") + e.what(), config_.cache_path,
                  "line " + std::to_string(line_no));
    }
  }
}

std::string JudgeClient::cache_key(const std::string& request) const {
  return nlohmann::json::array({config_.model, request}).dump();
}

std::optional<Verdict> JudgeClient::cache_lookup(const std::string& key) const {
  std::lock_guard lock(cache_mutex_);
  const auto it = cache_.find(key);
  if (it == cache_.end()) return std::nullopt;
  Verdict v = it->second;
  v.cached = true;
  return v;
}

void JudgeClient::cache_store(const std::string& key, const std::string& request, const Verdict& v) {
  std::lock_guard lock(cache_mutex_);
  if (!cache_.emplace(key, v).second || config_.cache_path.empty()) return;
  std::ofstream out(config_.cache_path, std::ios::app);
  if (!out) throw Error(kModule, "cannot append to cache", config_.cache_path);
  out << nlohmann::json{{"model", config_.model},
                        {"request", request},
                        {"score", v.score},
                        {"raw_reply", v.raw_reply}}
             .dump()
      << '\n';
}

std::string JudgeClient::render(const std::string& original, const std::string& lesioned,
                                const std::optional<std::string>& prompt) const {
  std::string out;
  std::size_t pos = 0;
  const std::string& t = config_.rubric;
  const bool send_prompt = config_.include_prompt && prompt.has_value();
  while (pos <= t.size()) {
    auto eol = t.find('\n', pos);
    if (eol == std::string::npos) eol = t.size();
    std::string line = t.substr(pos, eol - pos);
    const bool has_prompt = line.find("{PROMPT}") != std::string::npos;
    if (!has_prompt || send_prompt) {
      for (const auto& [ph, val] : {std::pair<std::string, const std::string*>{"{PROMPT}", send_prompt ? &*prompt : nullptr},
                                    {"{ORIGINAL}", &original},
                                    {"{LESIONED}", &lesioned}}) {
        if (!val) continue;
        for (auto p = line.find(ph); p != std::string::npos; p = line.find(ph, p + val->size()))
          line.replace(p, ph.size(), *val);
      }
      out += line;
      if (eol < t.size()) out += '\n';
    }
    pos = eol + 1;
  }
  return out;
}

std::string JudgeClient::post_chat(const nlohmann::json& messages) {
  const nlohmann::json body = {{"model", config_.model}, {"messages", messages}, {"temperature", 0}};
  httplib::Headers headers;
  if (!config_.api_key_env.empty())
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);

  std::string last_error;
  int delay = config_.backoff_ms;
  for (int attempt = 0; attempt < config_.retry_limit; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      delay *= 2;
    }
    ++calls_;
    httplib::Client client(scheme_host_port_);
    const auto secs = static_cast<time_t>(config_.timeout_seconds);
    const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    const auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    try {
      const auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      last_error = std::string("malformed response body: ") + e.what();
    }
  }
  throw Error(kModule, "judge endpoint failed after " + std::to_string(config_.retry_limit) +
                           " attempts: " + last_error);
}

Verdict JudgeClient::score_degradation(const std::string& original, const std::string& lesioned,
                                       const std::optional<std::string>& prompt) {
  if (original.empty() || lesioned.empty()) throw Error(kModule, "responses to compare must be non-empty");
  const auto request = render(original, lesioned, prompt);
  const auto key = cache_key(request);
  if (auto hit = cache_lookup(key)) return *hit;

  nlohmann::json messages = nlohmann::json::array();
  messages.push_back({{"role", "user"}, {"content", request}});
  std::string reply = post_chat(messages);
  auto score = parse_score(reply);
  if (!score) {
    messages.push_back({{"role", "assistant"}, {"content", reply}});
    messages.push_back({{"role", "user"}, {"content", kStrictFollowUp}});
    reply = post_chat(messages);
    score = parse_score(reply);
    if (!score) throw Error(kModule, "unparseable judge reply after re-ask: " + reply);
  }
  Verdict v{*score, reply, false};
  cache_store(key, request, v);
  return v;
}

BatchResult JudgeClient::score_batch(std::vector<trace::LesionRecord> records) {
  BatchResult out;
  out.records = std::move(records);

  // Unique judge requests still needing a score, in first-appearance order. Empty responses are
  // left to score_degradation so they surface as per-record failures.
  std::vector<std::string> keys;
  std::map<std::string, std::vector<std::size_t>> owners;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    const auto& r = out.records[i];
    if (r.judge_score) {
      ++out.skipped;
      continue;
    }
    const auto key = r.original_response.empty() || r.lesioned_response.empty()
                         ? "#" + std::to_string(i)
                         : cache_key(render(r.original_response, r.lesioned_response, r.prompt_text));
    auto& list = owners[key];
    if (list.empty()) keys.push_back(key);
    list.push_back(i);
  }

  struct Outcome {
    std::optional<Verdict> verdict;
    std::string error;
  };
  std::vector<Outcome> outcomes(keys.size());
  parallel_for(keys.size(), static_cast<unsigned>(config_.max_concurrency), [&](std::size_t k) {
    const auto& r = out.records[owners.at(keys[k]).front()];
    try {
      outcomes[k].verdict = score_degradation(r.original_response, r.lesioned_response, r.prompt_text);
    } catch (const std::exception& e) {
      outcomes[k].error = e.what();
    }
  });

  for (std::size_t k = 0; k < keys.size(); ++k) {
    for (auto i : owners[keys[k]]) {
      auto& r = out.records[i];
      if (outcomes[k].verdict) {
        r.judge_score = outcomes[k].verdict->score;
        r.judge_raw_reply = outcomes[k].verdict->raw_reply;
        (outcomes[k].verdict->cached ? out.cache_hits : out.scored) += 1;
      } else {
        out.failures.push_back({i, r.prompt_id, r.layer, outcomes[k].error});
      }
    }
  }
  std::sort(out.failures.begin(), out.failures.end(),
            [](const BatchFailure& a, const BatchFailure& b) { return a.index < b.index; });
  return out;
}

}  // namespace llmmap::judge
