#pragma once

// In-process chat-completions server for judge tests.

#include <atomic>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

// Eigen must precede httplib: <resolv.h> defines a `_res` macro that breaks Eigen's headers.
#include <Eigen/Dense>
#include <httplib.h>
#include <json.hpp>

namespace llmmap::testing {

class MockJudge {
 public:
  /// `reply` maps the request's message list to (status, assistant content).
  using Handler = std::function<std::pair<int, std::string>(const nlohmann::json& messages)>;

  explicit MockJudge(Handler reply) : reply_(std::move(reply)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      const auto body = nlohmann::json::parse(req.body);
      {
        std::lock_guard lock(mutex_);
        bodies_.push_back(body);
        auth_.push_back(req.get_header_value("Authorization"));
      }
      const auto [status, content] = reply_(body.at("messages"));
      res.status = status;
      const nlohmann::json out = {
          {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}}}}};
      res.set_content(out.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockJudge() {
    server_.stop();
    thread_.join();
  }

  MockJudge(const MockJudge&) = delete;
  MockJudge& operator=(const MockJudge&) = delete;

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }
  int requests() const { return requests_.load(); }
  std::vector<nlohmann::json> bodies() const {
    std::lock_guard lock(mutex_);
    return bodies_;
  }
  std::vector<std::string> auth_headers() const {
    std::lock_guard lock(mutex_);
    return auth_;
  }

 private:
  Handler reply_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<int> requests_{0};
  mutable std::mutex mutex_;
  std::vector<nlohmann::json> bodies_;
  std::vector<std::string> auth_;
};

/// Reply styles seen from chat models, with the score each should yield.
struct ReplyStyle {
  const char* reply;
  int score;
};

inline const std::vector<ReplyStyle>& reply_styles() {
  static const std::vector<ReplyStyle> styles = {
      {"7", 7},
      {"7/10", 7},
      {"Score: 7", 7},
      {"I would rate this 7 out of 10.", 7},
      {"Rating: 3. The response is mostly intact.", 3},
      {"**8**/10", 8},
      {"On a scale of 1-10, I'd give it a 6.", 6},
      {"On a scale from 1 to 10 the degradation is 9.", 9},
      {"Degradation score = 10", 10},
      {"10 - completely degraded gibberish", 10},
      {"Score: 2\nJustification: minor wording changes.", 2},
      {"The score is 4.", 4},
      {"1", 1},
      {"My rating of this response: 5/10", 5},
      {"5 / 10", 5},
      {"Score - 8", 8},
      {"Given the scale (1\xE2\x80\x93" "10), I assign 3.", 3},
      {"I'd say 2 out of 10, nearly identical.", 2},
      {"Rating: 10/10 - total gibberish", 10},
      {"  9  ", 9},
      {"Score: 6 (moderate degradation). Layer 12 clearly matters.", 6},
      {"After comparing both answers, the altered one loses key facts: 7/10.", 7},
      {"The response scores a solid 4 out of 10 on degradation", 4},
      {"SCORE: 5", 5},
  };
  return styles;
}

}  // namespace llmmap::testing
