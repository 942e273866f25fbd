#include "concise/remote_judge.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace concise {

void JudgeClientConfig::validate() const {
  if (!(timeout_s > 0.0)) throw ConfigError("judge.timeout_s must be > 0");
  if (max_retries < 0) throw ConfigError("judge.max_retries must be >= 0");
  if (max_concurrency < 1) throw ConfigError("judge.max_concurrency must be >= 1");
  if (!(backoff_initial_s >= 0.0) || !(backoff_max_s >= backoff_initial_s)) {
    throw ConfigError("judge backoff must satisfy 0 <= initial <= max");
  }
  if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0) {
    throw ConfigError("judge.endpoint must start with http:// or https://");
  }
}

RemoteJudge::RemoteJudge(JudgeClientConfig cfg, const World& world)
    : RemoteJudge(cfg, world,
                  TemplateSet::load(cfg.template_dir.empty() ? TemplateSet::default_dir()
                                                             : std::filesystem::path(cfg.template_dir),
                                    cfg.language)) {}

RemoteJudge::RemoteJudge(JudgeClientConfig cfg, const World& world, TemplateSet templates)
    : cfg_(std::move(cfg)), world_(world), templates_(std::move(templates)) {
  cfg_.validate();
  const auto scheme_end = cfg_.endpoint.find("://") + 3;
  const auto slash = cfg_.endpoint.find('/', scheme_end);
  base_ = cfg_.endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : cfg_.endpoint.substr(slash);
  sleep = [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); };
}

RemoteJudgeStats RemoteJudge::stats() const {
  return {requests_.load(), failures_.load(), unavailable_.load(), max_in_flight_.load()};
}

std::optional<ParsedVerdict> RemoteJudge::ask(Metric metric, const std::string& prompt) {
  httplib::Client client(base_);
  if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key) {
    client.set_bearer_token_auth(key);
  }
  const nlohmann::json body = {{"model", cfg_.model},
                               {"temperature", cfg_.temperature},
                               {"messages", {{{"role", "user"}, {"content", prompt}}}}};
  const std::string payload = body.dump();

  // The whole call, backoff included, stays within (retries + 1) * timeout.
  using Clock = std::chrono::steady_clock;
  const auto budget = std::chrono::duration<double>(cfg_.timeout_s * (cfg_.max_retries + 1));
  const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(budget);
  auto remaining = [&] { return std::chrono::duration<double>(deadline - Clock::now()); };

  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      const double wait = std::min(cfg_.backoff_max_s,
                                   cfg_.backoff_initial_s * std::pow(2.0, attempt - 1));
      sleep(std::min(std::chrono::duration<double>(wait), remaining()));
    }
    const double left = remaining().count();
    if (left <= 0.0) break;
    const auto to = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(std::min(cfg_.timeout_s, left)));
    client.set_connection_timeout(to);
    client.set_read_timeout(to);
    client.set_write_timeout(to);
    ++requests_;
    const int now = ++in_flight_;
    int seen = max_in_flight_.load();
    while (now > seen && !max_in_flight_.compare_exchange_weak(seen, now)) {
    }
    auto res = client.Post(path_, payload, "application/json");
    --in_flight_;

    if (!res) {
      ++failures_;
      spdlog::warn("judge request failed ({}), attempt {}/{}", httplib::to_string(res.error()),
                   attempt + 1, cfg_.max_retries + 1);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      ++failures_;
      spdlog::warn("judge replied HTTP {}, attempt {}/{}", res->status, attempt + 1,
                   cfg_.max_retries + 1);
      continue;
    }
    std::string text = res->body;
    const auto reply = nlohmann::json::parse(res->body, nullptr, false);
    if (!reply.is_discarded() && reply.is_object() && reply.contains("choices")) {
      try {
        text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const nlohmann::json::exception&) {
      }
    }
    if (auto v = parse_verdict(text, metric)) return v;
    ++failures_;
    spdlog::warn("unparseable {} verdict, attempt {}/{}", metric_name(metric), attempt + 1,
                 cfg_.max_retries + 1);
  }
  ++unavailable_;
  return std::nullopt;
}

JudgeOutcome RemoteJudge::judge(const Episode& e, const Trajectory& t) {
  const auto fields = prompt_fields(e, t, world_.vocab, templates_.language);
  JudgeOutcome out;
  if (auto c = ask(Metric::kCorrectness, templates_.correctness.render(fields))) {
    out.correct = c->value;
    out.reason = c->reason;
  }
  if (auto h = ask(Metric::kHelpfulness, templates_.helpfulness.render(fields))) {
    out.helpful = h->value;
    if (!h->reason.empty()) out.reason += (out.reason.empty() ? "" : " | ") + h->reason;
  }
  return out;
}

std::vector<JudgeOutcome> RemoteJudge::judge_batch(const std::vector<JudgeItem>& items) {
  std::vector<JudgeOutcome> out(items.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      out[i] = judge(*items[i].episode, *items[i].trajectory);
    }
  };
  const int n = static_cast<int>(std::min<std::size_t>(cfg_.max_concurrency, items.size()));
  std::vector<std::thread> pool;
  for (int w = 0; w < n; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return out;
}

}  // namespace concise
