#pragma once

#include <atomic>
#include <chrono>
#include <functional>

#include "concise/judge.hpp"

namespace concise {

struct JudgeClientConfig {
  std::string endpoint = "http://127.0.0.1:8000/v1/chat/completions";
  std::string model = "deepseek-r1";
  double timeout_s = 30.0;
  int max_retries = 3;
  int max_concurrency = 4;
  double backoff_initial_s = 0.5;
  double backoff_max_s = 8.0;
  double temperature = 0.0;
  std::string api_key_env = "CONCISE_JUDGE_API_KEY";
  std::string language = "en";
  std::string template_dir;  // empty = bundled templates

  void validate() const;
};

struct RemoteJudgeStats {
  long requests = 0;
  long failures = 0;     // transport errors, non-2xx replies, unparseable verdicts
  long unavailable = 0;  // verdicts given up on after all retries
  int max_in_flight = 0;
};

// LLM judge over an HTTP chat-completions endpoint. Correctness and
// helpfulness are asked separately, each retried with exponential backoff.
class RemoteJudge : public Judge {
 public:
  RemoteJudge(JudgeClientConfig cfg, const World& world);
  RemoteJudge(JudgeClientConfig cfg, const World& world, TemplateSet templates);

  JudgeOutcome judge(const Episode& e, const Trajectory& t) override;
  // Runs at most max_concurrency requests at a time.
  std::vector<JudgeOutcome> judge_batch(const std::vector<JudgeItem>& items) override;
  std::string identity() const override { return "remote:" + cfg_.model; }

  std::optional<ParsedVerdict> ask(Metric metric, const std::string& prompt);
  RemoteJudgeStats stats() const;

  // Replaceable for tests.
  std::function<void(std::chrono::duration<double>)> sleep;

 private:
  JudgeClientConfig cfg_;
  const World& world_;
  TemplateSet templates_;
  std::string base_;
  std::string path_;
  std::atomic<long> requests_{0}, failures_{0}, unavailable_{0};
  std::atomic<int> in_flight_{0}, max_in_flight_{0};
};

}  // namespace concise
