#pragma once

#include <atomic>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "llmmap/common.hpp"
#include "llmmap/trace_store.hpp"

namespace llmmap::judge {

/// Default rubric. Placeholders: {PROMPT}, {ORIGINAL}, {LESIONED}. Lines containing
/// {PROMPT} are dropped when the prompt is not sent.
extern const char* const kDefaultRubric;
extern const char* const kStrictFollowUp;

struct JudgeConfig {
  std::string endpoint = "http://127.0.0.1:8000/v1/chat/completions";
  std::string model = "gpt-4o";
  std::string rubric = kDefaultRubric;
  int max_concurrency = 4;
  int retry_limit = 3;  // total HTTP attempts per request
  double timeout_seconds = 60.0;
  std::string api_key_env = "LLMMAP_JUDGE_API_KEY";
  int backoff_ms = 250;  // doubled after each failed attempt
  std::string cache_path;  // JSON-lines; empty keeps the cache in memory only
  bool include_prompt = true;

  void validate() const;
};

JudgeConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const JudgeConfig& c);

/// Extracts the score from a judge reply.
/// Preference order: "N/10", "N out of 10", "score: N" / "rating: N", then the first
/// integer token that is not part of a scale mention such as "1-10" or "1 to 10".
/// Returns nullopt when no integer is found or the chosen number is fractional.
/// Throws llmmap::Error when the integer is outside 1..10.
std::optional<int> parse_score(std::string_view reply);

struct Verdict {
  int score = 0;
  std::string raw_reply;
  bool cached = false;
};

struct BatchFailure {
  std::size_t index = 0;  // position in the input list
  std::string prompt_id;
  int layer = 0;
  std::string message;
};

struct BatchResult {
  std::vector<trace::LesionRecord> records;  // same order as the input
  std::vector<BatchFailure> failures;
  std::size_t scored = 0;      // newly scored in this call
  std::size_t cache_hits = 0;
  std::size_t skipped = 0;     // already carried a score
};

/// Chat-completions judge. Safe to share across threads.
class JudgeClient {
 public:
  explicit JudgeClient(JudgeConfig config);

  const JudgeConfig& config() const noexcept { return config_; }

  Verdict score_degradation(const std::string& original, const std::string& lesioned,
                            const std::optional<std::string>& prompt = std::nullopt);

  /// Scores every record without a judge_score. Failures are reported, never filled in.
  BatchResult score_batch(std::vector<trace::LesionRecord> records);

  /// HTTP requests issued so far (including retries and re-asks).
  std::size_t network_calls() const noexcept { return calls_.load(); }

 private:
  std::string cache_key(const std::string& request) const;
  std::optional<Verdict> cache_lookup(const std::string& key) const;
  void cache_store(const std::string& key, const std::string& request, const Verdict& v);
  std::string post_chat(const nlohmann::json& messages);
  std::string render(const std::string& original, const std::string& lesioned,
                     const std::optional<std::string>& prompt) const;

  JudgeConfig config_;
  std::string scheme_host_port_;
  std::string path_;
  std::atomic<std::size_t> calls_{0};
  mutable std::mutex cache_mutex_;
  std::map<std::string, Verdict> cache_;
};

}  // namespace llmmap::judge
