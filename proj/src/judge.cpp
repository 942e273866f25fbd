#include "concise/judge.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include "concise/oracle.hpp"

namespace concise {

const char* metric_name(Metric m) {
  return m == Metric::kCorrectness ? "correctness" : "helpfulness";
}

PromptTemplate::PromptTemplate(Metric metric, std::string text)
    : metric_(metric), text_(std::move(text)) {
  static const std::regex re(R"(\{\{([A-Za-z_][A-Za-z0-9_]*)\}\})");
  for (auto it = std::sregex_iterator(text_.begin(), text_.end(), re); it != std::sregex_iterator();
       ++it) {
    const std::string name = (*it)[1].str();
    if (std::find(placeholders_.begin(), placeholders_.end(), name) != placeholders_.end()) {
      throw ConfigError("placeholder {{" + name + "}} appears more than once in the " +
                        metric_name(metric) + " template");
    }
    placeholders_.push_back(name);
  }
  if (placeholders_.empty()) {
    throw ConfigError(std::string("the ") + metric_name(metric) + " template has no placeholders");
  }
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path, Metric metric) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read template " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return PromptTemplate(metric, ss.str());
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& fields) const {
  std::string out = text_;
  for (const auto& name : placeholders_) {
    auto it = fields.find(name);
    if (it == fields.end()) {
      throw RenderError("no value for placeholder {{" + name + "}} in the " +
                        metric_name(metric_) + " template");
    }
    const std::string tag = "{{" + name + "}}";
    out.replace(out.find(tag), tag.size(), it->second);
  }
  if (out.empty()) throw RenderError("rendered prompt is empty");
  return out;
}

std::filesystem::path TemplateSet::default_dir() {
  if (const char* env = std::getenv("CONCISE_TEMPLATE_DIR")) return env;
  return CONCISE_TEMPLATE_DIR;
}

TemplateSet TemplateSet::load(const std::filesystem::path& dir, const std::string& language) {
  if (language != "en" && language != "zh") {
    throw ConfigError("template language must be 'en' or 'zh', got '" + language + "'");
  }
  return {PromptTemplate::load(dir / ("correctness_" + language + ".txt"), Metric::kCorrectness),
          PromptTemplate::load(dir / ("helpfulness_" + language + ".txt"), Metric::kHelpfulness),
          language};
}

std::string render_item_info(const Episode& e, const Vocabulary& vocab) {
  std::string out;
  for (int d : e.doc_ids()) {
    if (!out.empty()) out += "\n";
    out += vocab.name(vocab.doc(d)) + ":";
    for (const auto& f : e.documents) {
      if (f.doc == d) out += " " + vocab.name(vocab.value(f.key, f.value));
    }
  }
  return out;
}

std::string render_query(const Episode& e, const Vocabulary& vocab) {
  return vocab.name(vocab.doc(e.question.doc)) + " " + vocab.name(vocab.key(e.question.key)) + "?";
}

std::string render_history(const Episode& e, const Vocabulary& vocab, const std::string& language) {
  if (e.history.empty()) return language == "zh" ? "（无历史对话）" : "(no previous dialogue)";
  std::string out;
  for (const auto& t : e.history) {
    if (!out.empty()) out += "\n";
    out += "Q: " + vocab.name(vocab.doc(t.question.doc)) + " " +
           vocab.name(vocab.key(t.question.key)) + "? A: " + vocab.render(t.response);
  }
  return out;
}

std::map<std::string, std::string> prompt_fields(const Episode& e, const Trajectory& t,
                                                 const Vocabulary& vocab,
                                                 const std::string& language) {
  return {{"item_info", render_item_info(e, vocab)},
          {"history", render_history(e, vocab, language)},
          {"query", render_query(e, vocab)},
          {"response", vocab.render(t.response())}};
}

std::string render_prompt(const PromptTemplate& tpl, const Episode& e, const Trajectory& t,
                          const Vocabulary& vocab, const std::string& language) {
  return tpl.render(prompt_fields(e, t, vocab, language));
}

namespace {

const std::vector<std::string>& verdict_keys(Metric m) {
  static const std::vector<std::string> c = {"Is the Response Correct", "回复是否正确"};
  static const std::vector<std::string> h = {"Is the Response Helpful", "回复有无帮助"};
  return m == Metric::kCorrectness ? c : h;
}

std::string trim_lower(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  s = s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
  for (char& ch : s) {
    if (static_cast<unsigned char>(ch) < 0x80) ch = static_cast<char>(std::tolower(ch));
  }
  return s;
}

std::optional<bool> map_value(const nlohmann::json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer()) {
    const auto n = v.get<long long>();
    if (n == 0 || n == 1) return n == 1;
    return std::nullopt;
  }
  if (!v.is_string()) return std::nullopt;
  static const std::vector<std::string> yes = {"yes", "true", "1", "是", "正确", "有帮助"};
  static const std::vector<std::string> no = {"no", "false", "0", "否", "不正确", "错误",
                                              "无帮助", "没有帮助"};
  const std::string s = trim_lower(v.get<std::string>());
  if (std::find(yes.begin(), yes.end(), s) != yes.end()) return true;
  if (std::find(no.begin(), no.end(), s) != no.end()) return false;
  return std::nullopt;
}

// End of the balanced {...} starting at `open`, honoring JSON strings.
std::size_t match_brace(const std::string& s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i;
  }
  return std::string::npos;
}

}  // namespace

std::optional<ParsedVerdict> parse_verdict(const std::string& reply, Metric metric) {
  for (std::size_t open = reply.find('{'); open != std::string::npos;
       open = reply.find('{', open + 1)) {
    const std::size_t close = match_brace(reply, open);
    if (close == std::string::npos) continue;
    const auto obj = nlohmann::json::parse(reply.begin() + open, reply.begin() + close + 1,
                                           nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) continue;
    for (const auto& key : verdict_keys(metric)) {
      if (!obj.contains(key)) continue;
      const auto value = map_value(obj.at(key));
      if (!value) return std::nullopt;
      std::string reason;
      for (const char* rk : {"Reason for Judgment", "判断原因"}) {
        if (obj.contains(rk) && obj.at(rk).is_string()) reason = obj.at(rk).get<std::string>();
      }
      return ParsedVerdict{*value, reason};
    }
  }
  return std::nullopt;
}

std::string render_verdict_reply(bool value, const std::string& reason, Metric metric) {
  nlohmann::json j = {{"Reason for Judgment", reason},
                      {verdict_keys(metric).front(), value ? "yes" : "no"}};
  return j.dump();
}

JudgeVerdict JudgeOutcome::to_verdict() const {
  return {correct.value_or(false), helpful.value_or(false), reason};
}

std::vector<JudgeOutcome> Judge::judge_batch(const std::vector<JudgeItem>& items) {
  std::vector<JudgeOutcome> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(judge(*it.episode, *it.trajectory));
  return out;
}

JudgeOutcome OracleJudge::judge(const Episode& e, const Trajectory& t) {
  JudgeOutcome o;
  o.correct = oracle_correct(e, t, world_.vocab);
  o.helpful = oracle_helpful(e, t, world_.vocab);
  o.reason = "oracle";
  return o;
}

JudgeValidation validate_judge(Judge& judge, const std::vector<LabeledFixture>& fixtures) {
  std::vector<JudgeItem> items;
  for (const auto& f : fixtures) items.push_back({&f.episode, &f.trajectory});
  const auto outcomes = judge.judge_batch(items);
  JudgeValidation v;
  auto tally = [](MetricAccuracy& acc, const std::optional<bool>& got, bool want) {
    if (!got) {
      ++acc.missing;
      return;
    }
    ++acc.total;
    if (*got == want) ++acc.matches;
  };
  for (std::size_t i = 0; i < fixtures.size(); ++i) {
    tally(v.correctness, outcomes[i].correct, fixtures[i].correct);
    tally(v.helpfulness, outcomes[i].helpful, fixtures[i].helpful);
  }
  return v;
}

nlohmann::json fixture_to_json(const LabeledFixture& f, const Vocabulary& vocab) {
  std::vector<std::string> tokens;
  for (TokenId t : f.trajectory.tokens) tokens.push_back(vocab.name(t));
  return {{"episode", episode_to_json(f.episode, vocab)},
          {"tokens", tokens},
          {"truncated", f.trajectory.truncated},
          {"correct", f.correct},
          {"helpful", f.helpful}};
}

LabeledFixture fixture_from_json(const nlohmann::json& j, const Vocabulary& vocab) {
  LabeledFixture f{episode_from_json(j.at("episode"), vocab), {}, j.at("correct").get<bool>(),
                   j.at("helpful").get<bool>()};
  for (const auto& n : j.at("tokens")) f.trajectory.tokens.push_back(vocab.id(n.get<std::string>()));
  f.trajectory.truncated = j.value("truncated", false);
  return f;
}

std::vector<LabeledFixture> read_fixtures(const std::filesystem::path& path,
                                          const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read fixtures " + path.string());
  std::vector<LabeledFixture> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(fixture_from_json(nlohmann::json::parse(line), vocab));
    } catch (const nlohmann::json::exception& ex) {
      throw IoError(path.string() + ": " + ex.what());
    }
  }
  return out;
}

}  // namespace concise
