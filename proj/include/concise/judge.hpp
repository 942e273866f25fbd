#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "concise/reward.hpp"
#include "concise/trajectory.hpp"

namespace concise {

enum class Metric { kCorrectness, kHelpfulness };
const char* metric_name(Metric m);

// Prompt text with {{name}} placeholders. Every placeholder must occur exactly
// once.
class PromptTemplate {
 public:
  PromptTemplate(Metric metric, std::string text);
  static PromptTemplate load(const std::filesystem::path& path, Metric metric);

  Metric metric() const { return metric_; }
  const std::string& text() const { return text_; }
  const std::vector<std::string>& placeholders() const { return placeholders_; }

  // Throws RenderError when a placeholder has no value.
  std::string render(const std::map<std::string, std::string>& fields) const;

 private:
  Metric metric_;
  std::string text_;
  std::vector<std::string> placeholders_;
};

struct TemplateSet {
  PromptTemplate correctness;
  PromptTemplate helpfulness;
  std::string language;  // "en" or "zh"

  // Loads correctness_<lang>.txt and helpfulness_<lang>.txt from `dir`.
  static TemplateSet load(const std::filesystem::path& dir, const std::string& language);
  static std::filesystem::path default_dir();
};

// Text renderings of an episode for the judge prompts.
std::string render_item_info(const Episode& e, const Vocabulary& vocab);
std::string render_history(const Episode& e, const Vocabulary& vocab, const std::string& language);
std::string render_query(const Episode& e, const Vocabulary& vocab);
std::map<std::string, std::string> prompt_fields(const Episode& e, const Trajectory& t,
                                                 const Vocabulary& vocab,
                                                 const std::string& language);

std::string render_prompt(const PromptTemplate& tpl, const Episode& e, const Trajectory& t,
                          const Vocabulary& vocab, const std::string& language = "en");

struct ParsedVerdict {
  bool value;
  std::string reason;
};

// Finds the first JSON object in `reply` carrying the metric's verdict field
// (English or Chinese key) and maps its value to a boolean. Returns nullopt on
// parse failure.
std::optional<ParsedVerdict> parse_verdict(const std::string& reply, Metric metric);

// Canonical reply text for a verdict.
std::string render_verdict_reply(bool value, const std::string& reason, Metric metric);

// Verdict with per-component availability; a missing component means the
// judge could not deliver it.
struct JudgeOutcome {
  std::optional<bool> correct;
  std::optional<bool> helpful;
  std::string reason;

  bool complete() const { return correct.has_value() && helpful.has_value(); }
  JudgeVerdict to_verdict() const;  // unavailable components score 0
};

struct JudgeItem {
  const Episode* episode;
  const Trajectory* trajectory;
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual JudgeOutcome judge(const Episode& e, const Trajectory& t) = 0;
  // Default: sequential. Outcomes are returned in input order.
  virtual std::vector<JudgeOutcome> judge_batch(const std::vector<JudgeItem>& items);
  virtual std::string identity() const = 0;
};

class OracleJudge : public Judge {
 public:
  explicit OracleJudge(const World& world) : world_(world) {}
  JudgeOutcome judge(const Episode& e, const Trajectory& t) override;
  std::string identity() const override { return "oracle"; }

 private:
  const World& world_;
};

struct LabeledFixture {
  Episode episode;
  Trajectory trajectory;
  bool correct;
  bool helpful;
};

struct MetricAccuracy {
  long matches = 0;
  long total = 0;     // fixtures with a delivered verdict
  long missing = 0;   // fixtures where the judge gave no verdict
  double accuracy() const { return total > 0 ? static_cast<double>(matches) / total : 0.0; }
};

struct JudgeValidation {
  MetricAccuracy correctness;
  MetricAccuracy helpfulness;
};

JudgeValidation validate_judge(Judge& judge, const std::vector<LabeledFixture>& fixtures);

nlohmann::json fixture_to_json(const LabeledFixture& f, const Vocabulary& vocab);
LabeledFixture fixture_from_json(const nlohmann::json& j, const Vocabulary& vocab);
std::vector<LabeledFixture> read_fixtures(const std::filesystem::path& path, const Vocabulary& vocab);

}  // namespace concise
