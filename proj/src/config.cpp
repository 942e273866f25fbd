#include "concise/config.hpp"

#include <fstream>

namespace concise {

namespace {

using nlohmann::json;

const char* ref_mode_name(RefMode m) { return m == RefMode::kGreedy ? "greedy" : "sampled_mean"; }

RefMode parse_ref_mode(const std::string& s) {
  if (s == "greedy") return RefMode::kGreedy;
  if (s == "sampled_mean") return RefMode::kSampledMean;
  throw ConfigError("train.ref_mode must be 'greedy' or 'sampled_mean', got '" + s + "'");
}

const char* signal_name(CorrectSignal s) {
  switch (s) {
    case CorrectSignal::kExactMatch: return "em";
    case CorrectSignal::kF1: return "f1";
    default: return "judge";
  }
}

CorrectSignal parse_signal(const std::string& s) {
  if (s == "judge") return CorrectSignal::kJudge;
  if (s == "em") return CorrectSignal::kExactMatch;
  if (s == "f1") return CorrectSignal::kF1;
  throw ConfigError("train.correct_signal must be 'judge', 'em' or 'f1', got '" + s + "'");
}

// Rejects keys in `j` that the default serialization does not have.
void check_keys(const json& j, const json& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!known.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    if (known.at(it.key()).is_object()) check_keys(it.value(), known.at(it.key()), path);
  }
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& ex) {
      throw ConfigError(std::string("config key '") + key + "': " + ex.what());
    }
  }
}

}  // namespace

void RunConfig::validate() const {
  env.validate();
  policy.validate();
  teacher.validate();
  rft.validate();
  length.validate();
  weights.validate();
  grpo.validate();
  if (corpus.train_episodes < 1 || corpus.test_episodes < 1) {
    throw ConfigError("corpus sizes must be >= 1");
  }
  if (distill.episodes < 0) throw ConfigError("distill.episodes must be >= 0");
  if (train.updates < 0) throw ConfigError("train.updates must be >= 0");
  if (train.eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
  if (train.eval_episodes < 1 || train.eval_samples < 1) {
    throw ConfigError("train.eval_episodes and train.eval_samples must be >= 1");
  }
  if (!(train.eval_temperature > 0.0) || !(train.ref_temperature > 0.0)) {
    throw ConfigError("temperatures must be > 0");
  }
  if (train.ref_samples < 1) throw ConfigError("train.ref_samples must be >= 1");
  if (!(train.active_params > 0.0)) throw ConfigError("train.active_params must be > 0");
  if (judge.kind != "oracle" && judge.kind != "remote") {
    throw ConfigError("judge.kind must be 'oracle' or 'remote'");
  }
  if (judge.kind == "remote") judge.remote.validate();
  for (const auto& [lo, hi] : sweep.ratios) {
    LengthRewardConfig l = length;
    l.lambda_lower = lo;
    l.lambda_upper = hi;
    l.validate();
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

json config_to_json(const RunConfig& c) {
  return {
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"env",
       {{"n_doc_ids", c.env.n_doc_ids},
        {"n_keys", c.env.n_keys},
        {"values_per_key", c.env.values_per_key},
        {"n_fillers", c.env.n_fillers},
        {"docs_per_episode", c.env.docs_per_episode},
        {"facts_per_doc", c.env.facts_per_doc},
        {"answerable_fraction", c.env.answerable_fraction},
        {"max_history", c.env.max_history},
        {"read_accuracy", c.env.read_accuracy}}},
      {"corpus", {{"train_episodes", c.corpus.train_episodes}, {"test_episodes", c.corpus.test_episodes}}},
      {"policy", policy_config_to_json(c.policy)},
      {"teacher",
       {{"verbosity", c.teacher.verbosity},
        {"error_rate", c.teacher.error_rate},
        {"answer_reads", c.teacher.answer_reads},
        {"aux_reads", c.teacher.aux_reads},
        {"distractor_share", c.teacher.distractor_share},
        {"max_len", c.teacher.max_len}}},
      {"rft",
       {{"k", c.rft.k},
        {"temperature", c.rft.temperature},
        {"aux_coef", c.rft.aux_coef},
        {"learning_rate", c.rft.learning_rate},
        {"batch_size", c.rft.batch_size},
        {"epochs", c.rft.epochs},
        {"max_grad_norm", c.rft.max_grad_norm},
        {"sft_mode", c.rft.sft_mode}}},
      {"distill", {{"episodes", c.distill.episodes}}},
      {"length",
       {{"lambda_upper", c.length.lambda_upper},
        {"lambda_lower", c.length.lambda_lower},
        {"epsilon", c.length.epsilon}}},
      {"weights", {{"correct", c.weights.correct}, {"helpful", c.weights.helpful}, {"length", c.weights.length}}},
      {"grpo",
       {{"group_size", c.grpo.group_size},
        {"clip_range", c.grpo.clip_range},
        {"kl_coef", c.grpo.kl_coef},
        {"epsilon_std", c.grpo.epsilon_std},
        {"learning_rate", c.grpo.learning_rate},
        {"batch_size", c.grpo.batch_size},
        {"ratio", c.grpo.ratio == RatioGranularity::kToken ? "token" : "sequence"},
        {"token_norm", c.grpo.token_norm == TokenNorm::kLength ? "length" : "max_len"},
        {"epochs", c.grpo.epochs},
        {"temperature", c.grpo.temperature},
        {"max_len", c.grpo.max_len},
        {"max_grad_norm", c.grpo.max_grad_norm}}},
      {"train",
       {{"updates", c.train.updates},
        {"eval_every", c.train.eval_every},
        {"eval_episodes", c.train.eval_episodes},
        {"eval_samples", c.train.eval_samples},
        {"eval_temperature", c.train.eval_temperature},
        {"ref_mode", ref_mode_name(c.train.ref_mode)},
        {"ref_samples", c.train.ref_samples},
        {"ref_temperature", c.train.ref_temperature},
        {"correct_signal", signal_name(c.train.correct_signal)},
        {"active_params", c.train.active_params}}},
      {"judge",
       {{"kind", c.judge.kind},
        {"endpoint", c.judge.remote.endpoint},
        {"model", c.judge.remote.model},
        {"timeout_s", c.judge.remote.timeout_s},
        {"max_retries", c.judge.remote.max_retries},
        {"max_concurrency", c.judge.remote.max_concurrency},
        {"backoff_initial_s", c.judge.remote.backoff_initial_s},
        {"backoff_max_s", c.judge.remote.backoff_max_s},
        {"temperature", c.judge.remote.temperature},
        {"api_key_env", c.judge.remote.api_key_env},
        {"language", c.judge.remote.language},
        {"template_dir", c.judge.remote.template_dir}}},
      {"sweep", {{"ratios", c.sweep.ratios}, {"seeds", c.sweep.seeds}}},
  };
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  check_keys(j, config_to_json(c), "");
  get(j, "seed", c.seed);
  get(j, "output_dir", c.output_dir);
  if (j.contains("env")) {
    const auto& e = j.at("env");
    get(e, "n_doc_ids", c.env.n_doc_ids);
    get(e, "n_keys", c.env.n_keys);
    get(e, "values_per_key", c.env.values_per_key);
    get(e, "n_fillers", c.env.n_fillers);
    get(e, "docs_per_episode", c.env.docs_per_episode);
    get(e, "facts_per_doc", c.env.facts_per_doc);
    get(e, "answerable_fraction", c.env.answerable_fraction);
    get(e, "max_history", c.env.max_history);
    get(e, "read_accuracy", c.env.read_accuracy);
  }
  if (j.contains("corpus")) {
    get(j.at("corpus"), "train_episodes", c.corpus.train_episodes);
    get(j.at("corpus"), "test_episodes", c.corpus.test_episodes);
  }
  if (j.contains("policy")) {
    const auto& p = j.at("policy");
    get(p, "hidden", c.policy.hidden);
    get(p, "experts", c.policy.experts);
    get(p, "skip", c.policy.skip);
    get(p, "init_scale", c.policy.init_scale);
  }
  if (j.contains("teacher")) {
    const auto& t = j.at("teacher");
    get(t, "verbosity", c.teacher.verbosity);
    get(t, "error_rate", c.teacher.error_rate);
    get(t, "answer_reads", c.teacher.answer_reads);
    get(t, "aux_reads", c.teacher.aux_reads);
    get(t, "distractor_share", c.teacher.distractor_share);
    get(t, "max_len", c.teacher.max_len);
  }
  if (j.contains("rft")) {
    const auto& r = j.at("rft");
    get(r, "k", c.rft.k);
    get(r, "temperature", c.rft.temperature);
    get(r, "aux_coef", c.rft.aux_coef);
    get(r, "learning_rate", c.rft.learning_rate);
    get(r, "batch_size", c.rft.batch_size);
    get(r, "epochs", c.rft.epochs);
    get(r, "max_grad_norm", c.rft.max_grad_norm);
    get(r, "sft_mode", c.rft.sft_mode);
  }
  if (j.contains("distill")) get(j.at("distill"), "episodes", c.distill.episodes);
  if (j.contains("length")) {
    get(j.at("length"), "lambda_upper", c.length.lambda_upper);
    get(j.at("length"), "lambda_lower", c.length.lambda_lower);
    get(j.at("length"), "epsilon", c.length.epsilon);
  }
  if (j.contains("weights")) {
    get(j.at("weights"), "correct", c.weights.correct);
    get(j.at("weights"), "helpful", c.weights.helpful);
    get(j.at("weights"), "length", c.weights.length);
  }
  if (j.contains("grpo")) {
    const auto& g = j.at("grpo");
    get(g, "group_size", c.grpo.group_size);
    get(g, "clip_range", c.grpo.clip_range);
    get(g, "kl_coef", c.grpo.kl_coef);
    get(g, "epsilon_std", c.grpo.epsilon_std);
    get(g, "learning_rate", c.grpo.learning_rate);
    get(g, "batch_size", c.grpo.batch_size);
    std::string ratio = "token";
    get(g, "ratio", ratio);
    if (ratio != "token" && ratio != "sequence") {
      throw ConfigError("grpo.ratio must be 'token' or 'sequence'");
    }
    c.grpo.ratio = ratio == "token" ? RatioGranularity::kToken : RatioGranularity::kSequence;
    std::string norm = "length";
    get(g, "token_norm", norm);
    if (norm != "length" && norm != "max_len") {
      throw ConfigError("grpo.token_norm must be 'length' or 'max_len'");
    }
    c.grpo.token_norm = norm == "length" ? TokenNorm::kLength : TokenNorm::kMaxLen;
    get(g, "epochs", c.grpo.epochs);
    get(g, "temperature", c.grpo.temperature);
    get(g, "max_len", c.grpo.max_len);
    get(g, "max_grad_norm", c.grpo.max_grad_norm);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    get(t, "updates", c.train.updates);
    get(t, "eval_every", c.train.eval_every);
    get(t, "eval_episodes", c.train.eval_episodes);
    get(t, "eval_samples", c.train.eval_samples);
    get(t, "eval_temperature", c.train.eval_temperature);
    std::string mode = ref_mode_name(c.train.ref_mode);
    get(t, "ref_mode", mode);
    c.train.ref_mode = parse_ref_mode(mode);
    get(t, "ref_samples", c.train.ref_samples);
    get(t, "ref_temperature", c.train.ref_temperature);
    std::string signal = signal_name(c.train.correct_signal);
    get(t, "correct_signal", signal);
    c.train.correct_signal = parse_signal(signal);
    get(t, "active_params", c.train.active_params);
  }
  if (j.contains("judge")) {
    const auto& g = j.at("judge");
    auto& r = c.judge.remote;
    get(g, "kind", c.judge.kind);
    get(g, "endpoint", r.endpoint);
    get(g, "model", r.model);
    get(g, "timeout_s", r.timeout_s);
    get(g, "max_retries", r.max_retries);
    get(g, "max_concurrency", r.max_concurrency);
    get(g, "backoff_initial_s", r.backoff_initial_s);
    get(g, "backoff_max_s", r.backoff_max_s);
    get(g, "temperature", r.temperature);
    get(g, "api_key_env", r.api_key_env);
    get(g, "language", r.language);
    get(g, "template_dir", r.template_dir);
  }
  if (j.contains("sweep")) {
    get(j.at("sweep"), "ratios", c.sweep.ratios);
    get(j.at("sweep"), "seeds", c.sweep.seeds);
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    throw ConfigError("malformed config " + path.string() + ": " + ex.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write config " + path.string());
  out << config_to_json(c).dump(2) << '\n';
  if (!out) throw IoError("failed writing config " + path.string());
}

RunConfig apply_overrides(const RunConfig& c, const std::vector<std::string>& overrides) {
  json j = config_to_json(c);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + o + "' must look like key.path=value");
    }
    std::string pointer = "/" + o.substr(0, eq);
    for (char& ch : pointer) {
      if (ch == '.') ch = '/';
    }
    const json::json_pointer ptr(pointer);
    if (!j.contains(ptr)) throw ConfigError("unknown config key '" + o.substr(0, eq) + "'");
    const std::string raw = o.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    j[ptr] = value;
  }
  return config_from_json(j);
}

std::string config_hash(const RunConfig& c) { return to_hex(fnv1a(config_to_json(c).dump())); }

}  // namespace concise
