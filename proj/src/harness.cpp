#include "concise/harness.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "concise/oracle.hpp"

namespace concise {

namespace fs = std::filesystem;
using nlohmann::json;

double decode_flops(double active_params, double tpr) {
  if (!(active_params > 0.0) || !(tpr > 0.0)) {
    throw ConfigError("decode_flops needs positive parameter count and tokens per response");
  }
  return 2.0 * active_params * tpr / 1e12;
}

ReferenceLengths::ReferenceLengths(const Policy& reference, const World& world,
                                   const TrainSettings& settings, int max_len, std::uint64_t seed)
    : reference_(reference), world_(world), settings_(settings), max_len_(max_len), seed_(seed) {}

double ReferenceLengths::get(const Episode& e) {
  if (auto it = cache_.find(e.id); it != cache_.end()) return it->second;
  double len = 0.0;
  if (settings_.ref_mode == RefMode::kGreedy) {
    len = greedy_trajectory(reference_, world_, e, max_len_).length();
  } else {
    SampleOptions opts{settings_.ref_temperature, max_len_, false};
    for (int s = 0; s < settings_.ref_samples; ++s) {
      len += sample_trajectory(reference_, world_, e, opts,
                               derive_seed(seed_, e.id, static_cast<std::uint64_t>(s)))
                 .length();
    }
    len /= settings_.ref_samples;
  }
  // The length reward needs L_ref >= 1; an empty reference answer anchors at 1.
  len = std::max(len, 1.0);
  cache_.emplace(e.id, len);
  return len;
}

json EvalReport::to_json() const {
  return {{"episodes", episodes},       {"samples", samples},
          {"correctness", correctness}, {"helpfulness", helpfulness},
          {"mean_length", mean_length}, {"mean_ref_length", mean_ref_length},
          {"length_ratio", length_ratio}, {"em", em},
          {"f1", f1},                   {"decode_tflops", decode_tflops},
          {"truncated", truncated},     {"judge_unavailable", judge_unavailable}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  r.episodes = j.at("episodes").get<long>();
  r.samples = j.at("samples").get<long>();
  r.correctness = j.at("correctness").get<double>();
  r.helpfulness = j.at("helpfulness").get<double>();
  r.mean_length = j.at("mean_length").get<double>();
  r.mean_ref_length = j.at("mean_ref_length").get<double>();
  r.length_ratio = j.at("length_ratio").get<double>();
  r.em = j.at("em").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.decode_tflops = j.at("decode_tflops").get<double>();
  r.truncated = j.at("truncated").get<long>();
  r.judge_unavailable = j.at("judge_unavailable").get<long>();
  return r;
}

EvalReport evaluate(const Policy& policy, const World& world, const std::vector<Episode>& episodes,
                    Judge& judge, const TrainSettings& settings, ReferenceLengths* refs,
                    int max_len, std::uint64_t seed) {
  EvalReport r;
  const std::size_t n = std::min<std::size_t>(episodes.size(), settings.eval_episodes);
  std::vector<Trajectory> trajs;
  std::vector<JudgeItem> items;
  trajs.reserve(n * settings.eval_samples);
  SampleOptions opts{settings.eval_temperature, max_len, false};
  for (std::size_t i = 0; i < n; ++i) {
    for (int s = 0; s < settings.eval_samples; ++s) {
      trajs.push_back(sample_trajectory(policy, world, episodes[i], opts,
                                        derive_seed(seed, episodes[i].id, static_cast<std::uint64_t>(s))));
    }
  }
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    items.push_back({&episodes[i / settings.eval_samples], &trajs[i]});
  }
  const auto outcomes = judge.judge_batch(items);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const Episode& e = *items[i].episode;
    const Trajectory& t = trajs[i];
    const auto& o = outcomes[i];
    if (!o.complete()) ++r.judge_unavailable;
    r.correctness += o.correct.value_or(false) ? 1.0 : 0.0;
    r.helpfulness += o.helpful.value_or(false) ? 1.0 : 0.0;
    r.mean_length += t.length();
    r.truncated += t.truncated ? 1 : 0;
    const std::string pred = world.vocab.render(t.response());
    const std::string gold = world.vocab.name(e.gold_answer);
    r.em += em_score(pred, gold);
    r.f1 += f1_score(pred, gold);
  }
  r.episodes = static_cast<long>(n);
  r.samples = static_cast<long>(trajs.size());
  if (r.samples > 0) {
    const double s = static_cast<double>(r.samples);
    r.correctness /= s;
    r.helpfulness /= s;
    r.mean_length /= s;
    r.em /= s;
    r.f1 /= s;
  }
  if (refs && n > 0) {
    for (std::size_t i = 0; i < n; ++i) r.mean_ref_length += refs->get(episodes[i]);
    r.mean_ref_length /= static_cast<double>(n);
    r.length_ratio = r.mean_length / r.mean_ref_length;
  }
  r.decode_tflops = r.mean_length > 0.0 ? decode_flops(settings.active_params, r.mean_length) : 0.0;
  return r;
}

std::unique_ptr<Judge> make_judge(const RunConfig& cfg, const World& world) {
  if (cfg.judge.kind == "remote") return std::make_unique<RemoteJudge>(cfg.judge.remote, world);
  return std::make_unique<OracleJudge>(world);
}

namespace {

constexpr std::uint64_t kOrderStream = 0x6f72646572;
constexpr std::uint64_t kRolloutStream = 0x726f6c6c;
constexpr std::uint64_t kRefStream = 0x726566;
constexpr std::uint64_t kEvalStream = 0x6576616c;

double correct_signal(const TrainSettings& s, const World& world, const Episode& e,
                      const Trajectory& t, const JudgeOutcome& o) {
  switch (s.correct_signal) {
    case CorrectSignal::kExactMatch:
      return em_score(world.vocab.render(t.response()), world.vocab.name(e.gold_answer));
    case CorrectSignal::kF1:
      return f1_score(world.vocab.render(t.response()), world.vocab.name(e.gold_answer));
    default:
      return o.correct.value_or(false) ? 1.0 : 0.0;
  }
}

json eval_fields(const EvalReport& r) {
  return {{"eval_correct", r.correctness},
          {"eval_helpful", r.helpfulness},
          {"eval_length", r.mean_length},
          {"eval_ref_length", r.mean_ref_length},
          {"eval_length_ratio", r.length_ratio}};
}

}  // namespace

TrainResult train_grpo(const RunConfig& cfg, const World& world, Policy& policy,
                       const Policy& reference, const std::vector<Episode>& train,
                       const std::vector<Episode>& test, Judge& judge, MetricsSink* sink) {
  cfg.validate();
  if (train.empty()) throw Error("training split is empty");
  const auto& g = cfg.grpo;
  const auto t0 = std::chrono::steady_clock::now();
  auto wall = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  ReferenceLengths refs(reference, world, cfg.train, g.max_len, derive_seed(cfg.seed, kRefStream));
  OracleJudge oracle(world);
  const std::uint64_t eval_seed = derive_seed(cfg.seed, kEvalStream);
  auto run_eval = [&] {
    return evaluate(policy, world, test, oracle, cfg.train, &refs, g.max_len, eval_seed);
  };

  TrainResult result;
  result.initial = run_eval();
  result.final = result.initial;
  {
    json rec = eval_fields(result.initial);
    result.history.push_back(rec);
    if (sink) sink->write(0, rec, wall());
  }

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 order_rng(derive_seed(cfg.seed, kOrderStream));
  std::size_t cursor = order.size();
  auto next_episode = [&]() -> const Episode& {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), order_rng);
      cursor = 0;
    }
    return train[order[cursor++]];
  };

  Adam opt(policy.n_params(), {g.learning_rate});
  SampleOptions opts{g.temperature, g.max_len, g.kl_coef > 0.0};

  for (int u = 1; u <= cfg.train.updates; ++u) {
    // pi_old: the parameters at the start of this outer iteration.
    const Policy old = policy;
    std::vector<RolloutGroup> groups(g.batch_size);
    std::vector<JudgeItem> items;
    double ref_sum = 0.0;
    for (int b = 0; b < g.batch_size; ++b) {
      RolloutGroup& grp = groups[b];
      grp.episode = &next_episode();
      grp.ref_length = refs.get(*grp.episode);
      ref_sum += grp.ref_length;
      const std::uint64_t base = derive_seed(cfg.seed, kRolloutStream, static_cast<std::uint64_t>(u));
      for (int j = 0; j < g.group_size; ++j) {
        grp.trajectories.push_back(sample_trajectory(
            old, world, *grp.episode, opts,
            derive_seed(base, static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(j))));
      }
    }
    for (auto& grp : groups) {
      for (auto& t : grp.trajectories) items.push_back({grp.episode, &t});
    }
    const auto outcomes = judge.judge_batch(items);
    long unavailable = 0;
    std::size_t at = 0;
    for (auto& grp : groups) {
      for (auto& t : grp.trajectories) {
        const JudgeOutcome& o = outcomes[at++];
        if (!o.complete()) {
          ++unavailable;
          spdlog::warn("judge verdict unavailable for episode {}; missing components score 0",
                       grp.episode->id);
        }
        const double rl = length_reward(t.length(), grp.ref_length, cfg.length);
        grp.rewards.push_back(composite_reward(correct_signal(cfg.train, world, *grp.episode, t, o),
                                               o.helpful.value_or(false) ? 1.0 : 0.0, rl,
                                               cfg.weights));
      }
      grp.compute_advantages(g.epsilon_std);
    }
    result.judge_unavailable += unavailable;

    StepMetrics m;
    for (int ep = 0; ep < g.epochs; ++ep) m = update_step(policy, world, groups, g, opt);

    json rec = {{"loss", m.loss},
                {"clip_fraction", m.clip_fraction},
                {"kl", m.kl},
                {"grad_norm", m.grad_norm},
                {"mean_length", m.mean_length},
                {"mean_ref_length", ref_sum / g.batch_size},
                {"r_correct", m.r_correct},
                {"r_helpful", m.r_helpful},
                {"r_length", m.r_length},
                {"reward", m.reward},
                {"judge_unavailable", unavailable}};
    if (u % cfg.train.eval_every == 0 || u == cfg.train.updates) {
      result.final = run_eval();
      rec.update(eval_fields(result.final));
    }
    result.history.push_back(rec);
    if (sink) sink->write(u, rec, wall());
  }
  return result;
}

DistillOutcome distill(const RunConfig& cfg, const World& world,
                       const std::vector<Episode>& train, Judge& judge) {
  cfg.validate();
  std::vector<Episode> episodes = train;
  if (cfg.distill.episodes > 0 && static_cast<std::size_t>(cfg.distill.episodes) < episodes.size()) {
    episodes.resize(cfg.distill.episodes);
  }
  ScriptedTeacher teacher(world, cfg.teacher);
  const int k = cfg.rft.sft_mode ? 1 : cfg.rft.k;
  long failures = 0;
  auto sets = generate_candidates(teacher, episodes, k, cfg.rft.temperature,
                                  derive_seed(cfg.seed, 0x7465616368), &failures);
  double total_len = 0.0;
  long n = 0;
  for (const auto& s : sets) {
    for (const auto& c : s.candidates) {
      total_len += c.trajectory.length();
      ++n;
    }
  }

  FilterStats stats;
  DistillDataset ds;
  if (cfg.rft.sft_mode) {
    ds = unfiltered_dataset(sets);
    stats.sets = stats.accepted = static_cast<long>(sets.size());
    stats.candidates = n;
  } else {
    ds = rejection_filter(sets, judge, &stats);
  }
  ds.provenance.seed = cfg.seed;
  ds.provenance.k = k;
  ds.provenance.temperature = cfg.rft.temperature;
  ds.provenance.teacher = teacher.identity();
  if (ds.examples.empty()) {
    throw Error(fmt::format("no candidate passed the filter ({} sets, {} candidates, {} without verdict)",
                            stats.sets, stats.candidates, stats.judge_unavailable));
  }

  Policy student = world.make_policy(cfg.policy);
  student.init(derive_seed(cfg.seed, 0x73747564));
  auto losses = run_rft(student, world, ds, cfg.rft, derive_seed(cfg.seed, 0x736674));
  return {std::move(student), std::move(ds), stats, std::move(losses),
          n > 0 ? total_len / static_cast<double>(n) : 0.0};
}

namespace {

std::vector<Episode> load_split(const fs::path& dir, const std::string& name, const World& world) {
  const fs::path p = dir / (name + ".jsonl");
  if (!fs::exists(p)) throw IoError("missing corpus file " + p.string() + " (run gen-corpus first)");
  return read_corpus(p, world.vocab);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

Policy load_reference(const fs::path& path, const World& world) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.policy.input_dim() != world.layout.dim || ck.policy.vocab_size() != world.vocab.size()) {
    throw ConfigError("checkpoint " + path.string() + " does not match the environment config");
  }
  return std::move(ck.policy);
}

void write_table_csv(const fs::path& path, const std::vector<std::string>& cols,
                     const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (i) out << ',';
      if (!r.contains(cols[i]) || r.at(cols[i]).is_null()) continue;
      const auto& v = r.at(cols[i]);
      out << (v.is_string() ? v.get<std::string>() : v.dump());
    }
    out << '\n';
  }
}

// One GRPO run per (variant, seed); rows carry per-seed finals and means.
struct RunSpec {
  std::string name;
  RunConfig cfg;
};

std::vector<std::uint64_t> variant_seeds(const RunConfig& cfg) {
  if (cfg.sweep.seeds.empty()) return {cfg.seed};
  return cfg.sweep.seeds;
}

json run_variants(const std::vector<RunSpec>& specs, const fs::path& corpus_dir,
                  const fs::path& reference, const std::vector<std::uint64_t>& seeds,
                  const fs::path& out_dir, const std::string& label) {
  std::vector<json> rows;
  for (const auto& spec : specs) {
    json row = {{label, spec.name}};
    std::vector<json> per_seed;
    double c = 0, h = 0, l = 0, ratio = 0;
    int ok = 0;
    for (auto seed : seeds) {
      RunConfig cfg = spec.cfg;
      cfg.seed = seed;
      cfg.output_dir = (out_dir / spec.name / fmt::format("seed-{}", seed)).string();
      try {
        World world(cfg.env);
        const auto train = load_split(corpus_dir, "train", world);
        const auto test = load_split(corpus_dir, "test", world);
        const Policy ref = load_reference(reference, world);
        Policy policy = ref;
        auto judge = make_judge(cfg, world);
        MetricsSink sink(cfg.output_dir);
        const TrainResult tr = train_grpo(cfg, world, policy, ref, train, test, *judge, &sink);
        save_checkpoint(fs::path(cfg.output_dir) / "policy.json", policy, config_hash(cfg));
        per_seed.push_back(
            {{"seed", seed}, {"initial", tr.initial.to_json()}, {"final", tr.final.to_json()}});
        c += tr.final.correctness;
        h += tr.final.helpfulness;
        l += tr.final.mean_length;
        ratio += tr.final.length_ratio;
        ++ok;
      } catch (const std::exception& ex) {
        spdlog::error("{} '{}' seed {} failed: {}", label, spec.name, seed, ex.what());
        per_seed.push_back({{"seed", seed}, {"error", ex.what()}});
      }
    }
    row["runs"] = per_seed;
    if (ok > 0) {
      row["correctness"] = c / ok;
      row["helpfulness"] = h / ok;
      row["mean_length"] = l / ok;
      row["length_ratio"] = ratio / ok;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

void cmd_init_config(const fs::path& path) { save_config(path, RunConfig{}); }

json cmd_gen_corpus(const RunConfig& cfg) {
  cfg.validate();
  World world(cfg.env);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  // Train and test come from independent generator streams.
  EnvGenerator train_gen(cfg.env, derive_seed(cfg.seed, 0x747261696e));
  EnvGenerator test_gen(cfg.env, derive_seed(cfg.seed, 0x74657374));
  const auto train = train_gen.take(cfg.corpus.train_episodes);
  auto test = test_gen.take(cfg.corpus.test_episodes);
  // Test ids continue after the train ids so the splits never share an id.
  for (auto& e : test) e.id += static_cast<std::uint64_t>(cfg.corpus.train_episodes);
  write_corpus(dir / "train.jsonl", train, world.vocab);
  write_corpus(dir / "test.jsonl", test, world.vocab);
  return {{"train", train.size()}, {"test", test.size()}, {"dir", dir.string()}};
}

json cmd_distill(const RunConfig& cfg, const fs::path& corpus_dir) {
  World world(cfg.env);
  const auto train = load_split(corpus_dir, "train", world);
  auto judge = make_judge(cfg, world);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  DistillOutcome out = distill(cfg, world, train, *judge);
  save_checkpoint(dir / "rft_checkpoint.json", out.policy, config_hash(cfg),
                  {{"stage", cfg.rft.sft_mode ? "sft" : "rft"}});
  write_dataset(dir / "distill.jsonl", out.dataset, world.vocab);
  json losses = json::array();
  for (const auto& l : out.losses) {
    losses.push_back({{"epoch", l.epoch}, {"sft", l.sft}, {"aux", l.aux}, {"total", l.total}});
  }
  json stats = {{"sets", out.stats.sets},
                {"accepted", out.stats.accepted},
                {"candidates", out.stats.candidates},
                {"judge_unavailable", out.stats.judge_unavailable},
                {"acceptance_rate", out.stats.acceptance_rate()},
                {"sft_mode", cfg.rft.sft_mode},
                {"teacher_mean_length", out.teacher_mean_length},
                {"dataset_hash", dataset_hash(out.dataset, world.vocab)},
                {"losses", losses}};
  write_json(dir / "distill_stats.json", stats);
  return stats;
}

json cmd_train(const RunConfig& cfg, const fs::path& corpus_dir,
               const std::optional<fs::path>& reference, bool from_scratch) {
  World world(cfg.env);
  const auto train = load_split(corpus_dir, "train", world);
  const auto test = load_split(corpus_dir, "test", world);
  Policy ref = world.make_policy(cfg.policy);
  if (from_scratch) {
    ref.init(derive_seed(cfg.seed, 0x73747564));
  } else {
    if (!reference) throw ConfigError("train needs --ref CHECKPOINT or --from-scratch");
    ref = load_reference(*reference, world);
  }
  Policy policy = ref;
  auto judge = make_judge(cfg, world);
  MetricsSink sink(cfg.output_dir);
  const TrainResult tr = train_grpo(cfg, world, policy, ref, train, test, *judge, &sink);
  save_checkpoint(fs::path(cfg.output_dir) / "policy.json", policy, config_hash(cfg));
  json summary = {{"initial", tr.initial.to_json()},
                  {"final", tr.final.to_json()},
                  {"judge_unavailable", tr.judge_unavailable},
                  {"config_hash", config_hash(cfg)}};
  write_json(fs::path(cfg.output_dir) / "summary.json", summary);
  return summary;
}

json cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& test_corpus,
              const std::optional<fs::path>& reference) {
  World world(cfg.env);
  if (!fs::exists(test_corpus)) throw IoError("missing test corpus " + test_corpus.string());
  const auto test = read_corpus(test_corpus, world.vocab);
  const Policy policy = load_reference(checkpoint, world);
  auto judge = make_judge(cfg, world);
  std::optional<Policy> ref;
  std::optional<ReferenceLengths> refs;
  if (reference) {
    ref.emplace(load_reference(*reference, world));
    refs.emplace(*ref, world, cfg.train, cfg.grpo.max_len, derive_seed(cfg.seed, kRefStream));
  }
  const EvalReport r = evaluate(policy, world, test, *judge, cfg.train, refs ? &*refs : nullptr,
                                cfg.grpo.max_len, derive_seed(cfg.seed, kEvalStream));
  json out = r.to_json();
  out["active_params"] = cfg.train.active_params;
  out["checkpoint"] = checkpoint.string();
  fs::create_directories(cfg.output_dir);
  write_json(fs::path(cfg.output_dir) / "eval.json", out);
  return out;
}

json cmd_sweep_length_ratio(const RunConfig& cfg, const fs::path& corpus_dir,
                            const fs::path& reference) {
  cfg.validate();
  auto ratios = cfg.sweep.ratios;
  std::stable_sort(ratios.begin(), ratios.end(), [](const auto& a, const auto& b) {
    return a.first + a.second < b.first + b.second;
  });
  std::vector<RunSpec> specs;
  for (const auto& [lo, hi] : ratios) {
    RunConfig c = cfg;
    c.length.lambda_lower = lo;
    c.length.lambda_upper = hi;
    specs.push_back({fmt::format("{}-{}", lo, hi), c});
  }
  const fs::path dir = fs::path(cfg.output_dir) / "sweep";
  json rows = run_variants(specs, corpus_dir, reference, variant_seeds(cfg), dir, "setting");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i]["lambda_lower"] = ratios[i].first;
    rows[i]["lambda_upper"] = ratios[i].second;
  }
  fs::create_directories(dir);
  write_json(dir / "sweep.json", rows);
  write_table_csv(dir / "sweep.csv",
                  {"setting", "lambda_lower", "lambda_upper", "correctness", "helpfulness",
                   "mean_length", "length_ratio"},
                  rows);
  return rows;
}

std::vector<std::pair<std::string, RewardWeights>> ablation_arms(const RewardWeights& full) {
  RewardWeights no_len = full, no_help = full, no_corr = full;
  no_len.length = 0.0;
  no_help.helpful = 0.0;
  no_corr.correct = 0.0;
  return {{"full", full}, {"drop_length", no_len}, {"drop_helpful", no_help}, {"drop_correct", no_corr}};
}

json cmd_ablate_rewards(const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& reference) {
  cfg.validate();
  std::vector<RunSpec> specs;
  for (const auto& [name, w] : ablation_arms(cfg.weights)) {
    RunConfig c = cfg;
    c.weights = w;
    specs.push_back({name, c});
  }
  const fs::path dir = fs::path(cfg.output_dir) / "ablation";
  json rows = run_variants(specs, corpus_dir, reference, variant_seeds(cfg), dir, "arm");
  fs::create_directories(dir);
  write_json(dir / "ablation.json", rows);
  write_table_csv(dir / "ablation.csv",
                  {"arm", "correctness", "helpfulness", "mean_length", "length_ratio"}, rows);
  return rows;
}

}  // namespace concise
