#pragma once

// Chat-completion judge client. Needs CPPHTTPLIB_OPENSSL_SUPPORT for https endpoints.

#include <chrono>
#include <cstdlib>
#include <regex>
#include <string>
#include <thread>

// must precede httplib.h (<resolv.h> defines _res)
#include "rda/diagnostics.hpp"

#include <httplib.h>
#include <json.hpp>

namespace rda::diag {

inline const std::string kJudgePrompt =
    "Rate my answer based on the correct answer out of 100, with higher scores indicating that the answer is closer "
    "to the correct answer, and you should be accurate to single digits like 62, 78, 41, etc. Output the number only.";

struct HttpJudgeOptions {
  std::string endpoint;  // scheme://host[:port]/path
  std::string model = "gpt-3.5-turbo";
  std::string api_key;
  double timeout_s = 30.0;
  std::size_t retries = 3;  // extra attempts after the first
  double backoff_s = 1.0;   // doubled after each failed attempt
};

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline Endpoint split_endpoint(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw JudgeError("bad judge endpoint '" + url + "'");
  return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

// Reads the key from the named environment variable; empty or unset is an error.
inline std::string api_key_from_env(const std::string& var) {
  const char* v = std::getenv(var.c_str());
  if (!v || !*v) throw JudgeError("judge API key variable " + var + " is not set");
  return v;
}

// First number in a reply such as "78" or "Score: 78.5".
inline double parse_judge_reply(const std::string& text) {
  static const std::regex num(R"([-+]?\d+(\.\d+)?)");
  std::smatch m;
  if (!std::regex_search(text, m, num)) throw JudgeError("judge reply has no score: '" + text + "'");
  return std::stod(m.str());
}

class HttpJudge : public JudgeClient {
 public:
  explicit HttpJudge(HttpJudgeOptions o) : o_(std::move(o)), ep_(split_endpoint(o_.endpoint)) {
    if (o_.api_key.empty()) throw JudgeError("judge API key is empty");
  }

  std::string request_body(const std::string& prediction, const std::string& ground_truth) const {
    nlohmann::ordered_json body;
    body["model"] = o_.model;
    body["temperature"] = 0;
    body["messages"] = nlohmann::ordered_json::array(
        {{{"role", "user"},
          {"content", kJudgePrompt + " This is the correct answer: " + ground_truth + " This is my answer: " + prediction}}});
    return body.dump();
  }

  double score(const std::string& prediction, const std::string& ground_truth) override {
    const std::string body = request_body(prediction, ground_truth);
    std::string last_error;
    double wait = o_.backoff_s;
    for (std::size_t attempt = 0; attempt <= o_.retries; ++attempt) {
      if (attempt > 0 && wait > 0.0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(wait));
        wait *= 2.0;
      }
      httplib::Client cli(ep_.origin);
      const auto t = std::chrono::duration<double>(o_.timeout_s);
      cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
      cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
      cli.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
      httplib::Headers headers = {{"Authorization", "Bearer " + o_.api_key}};
      auto res = cli.Post(ep_.path, headers, body, "application/json");
      if (!res) {
        last_error = "request failed: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) throw JudgeError("HTTP " + std::to_string(res->status) + ": " + res->body);
      try {
        const auto j = nlohmann::json::parse(res->body);
        return parse_judge_reply(j.at("choices").at(0).at("message").at("content").get<std::string>());
      } catch (const nlohmann::json::exception& e) {
        throw JudgeError(std::string("malformed judge response: ") + e.what());
      }
    }
    throw JudgeError(last_error + " after " + std::to_string(o_.retries + 1) + " attempts");
  }

 private:
  HttpJudgeOptions o_;
  Endpoint ep_;
};

}  // namespace rda::diag
