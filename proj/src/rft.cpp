#include "concise/rft.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

namespace concise {

void RFTConfig::validate() const {
  if (k < 1) throw ConfigError("rft.k must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("rft.temperature must be > 0");
  if (!(aux_coef >= 0.0)) throw ConfigError("rft.aux_coef must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("rft.learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("rft.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("rft.epochs must be >= 0");
  if (!(max_grad_norm >= 0.0)) throw ConfigError("rft.max_grad_norm must be >= 0");
}

std::vector<CandidateSet> generate_candidates(const Teacher& teacher,
                                              const std::vector<Episode>& episodes, int k,
                                              double temperature, std::uint64_t seed,
                                              long* failures) {
  if (k < 1) throw ConfigError("k must be >= 1");
  std::vector<CandidateSet> out;
  long failed = 0;
  for (const auto& e : episodes) {
    CandidateSet set;
    set.episode = &e;
    try {
      for (int i = 0; i < k; ++i) {
        set.candidates.push_back(
            {teacher.generate(e, temperature, derive_seed(seed, e.id, static_cast<std::uint64_t>(i))),
             std::nullopt});
      }
    } catch (const std::exception& ex) {
      ++failed;
      spdlog::warn("teacher failed on episode {}: {}", e.id, ex.what());
      continue;
    }
    out.push_back(std::move(set));
  }
  if (failures) *failures = failed;
  return out;
}

DistillDataset rejection_filter(std::vector<CandidateSet>& sets, Judge& judge, FilterStats* stats) {
  std::vector<JudgeItem> items;
  for (const auto& s : sets) {
    for (const auto& c : s.candidates) items.push_back({s.episode, &c.trajectory});
  }
  const auto outcomes = judge.judge_batch(items);

  DistillDataset ds;
  ds.provenance.judge = judge.identity();
  FilterStats st;
  std::size_t at = 0;
  for (auto& s : sets) {
    ++st.sets;
    s.accepted.reset();
    for (std::size_t i = 0; i < s.candidates.size(); ++i) {
      Candidate& c = s.candidates[i];
      c.outcome = outcomes[at++];
      ++st.candidates;
      if (!c.outcome->complete()) {
        ++st.judge_unavailable;
        spdlog::error("no verdict for candidate {} of episode {}; rejecting it", i, s.episode->id);
        continue;
      }
      if (!s.accepted && *c.outcome->correct && *c.outcome->helpful) {
        s.accepted = static_cast<int>(i);
      }
    }
    if (s.accepted) {
      ++st.accepted;
      const Candidate& c = s.candidates[*s.accepted];
      ds.examples.push_back({*s.episode, c.trajectory, *c.outcome, *s.accepted, true});
    }
  }
  if (stats) *stats = st;
  return ds;
}

DistillDataset unfiltered_dataset(const std::vector<CandidateSet>& sets) {
  DistillDataset ds;
  ds.provenance.judge = "none";
  ds.provenance.filtered = false;
  for (const auto& s : sets) {
    if (s.candidates.empty()) continue;
    ds.examples.push_back({*s.episode, s.candidates.front().trajectory, {}, 0, false});
  }
  return ds;
}

namespace {

nlohmann::json provenance_to_json(const DistillProvenance& p) {
  return {{"seed", p.seed},         {"k", p.k},         {"temperature", p.temperature},
          {"teacher", p.teacher},   {"judge", p.judge}, {"filtered", p.filtered}};
}

nlohmann::json optional_bool(const std::optional<bool>& b) {
  return b ? nlohmann::json(*b) : nlohmann::json(nullptr);
}

std::optional<bool> read_optional_bool(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<bool>();
}

nlohmann::json example_to_json(const DistillExample& ex, const Vocabulary& vocab) {
  std::vector<std::string> target;
  for (TokenId t : ex.trajectory.tokens) target.push_back(vocab.name(t));
  return {{"episode_id", ex.episode.id},
          {"episode", episode_to_json(ex.episode, vocab)},
          {"target", target},
          {"truncated", ex.trajectory.truncated},
          {"candidate_index", ex.candidate_index},
          {"verdict",
           {{"correct", optional_bool(ex.verdict.correct)},
            {"helpful", optional_bool(ex.verdict.helpful)},
            {"reason", ex.verdict.reason}}},
          {"accepted", ex.accepted}};
}

std::string serialize(const DistillDataset& ds, const Vocabulary& vocab) {
  std::ostringstream out;
  out << nlohmann::json{{"provenance", provenance_to_json(ds.provenance)},
                        {"count", ds.examples.size()}}
             .dump()
      << '\n';
  for (const auto& ex : ds.examples) out << example_to_json(ex, vocab).dump() << '\n';
  return out.str();
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const DistillDataset& ds,
                   const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset " + path.string());
  out << serialize(ds, vocab);
  if (!out) throw IoError("failed writing dataset " + path.string());
}

DistillDataset read_dataset(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read dataset " + path.string());
  DistillDataset ds;
  std::string line;
  bool header = true;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (header) {
        const auto& p = j.at("provenance");
        ds.provenance = {p.at("seed").get<std::uint64_t>(), p.at("k").get<int>(),
                         p.at("temperature").get<double>(), p.at("teacher").get<std::string>(),
                         p.at("judge").get<std::string>(), p.at("filtered").get<bool>()};
        header = false;
        continue;
      }
      DistillExample ex;
      ex.episode = episode_from_json(j.at("episode"), vocab);
      for (const auto& n : j.at("target")) ex.trajectory.tokens.push_back(vocab.id(n.get<std::string>()));
      ex.trajectory.truncated = j.value("truncated", false);
      ex.candidate_index = j.at("candidate_index").get<int>();
      const auto& v = j.at("verdict");
      ex.verdict.correct = read_optional_bool(v.at("correct"));
      ex.verdict.helpful = read_optional_bool(v.at("helpful"));
      ex.verdict.reason = v.at("reason").get<std::string>();
      ex.accepted = j.at("accepted").get<bool>();
      ds.examples.push_back(std::move(ex));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw IoError("malformed dataset " + path.string() + ": " + ex.what());
  }
  if (header) throw IoError("dataset " + path.string() + " has no provenance header");
  return ds;
}

std::string dataset_hash(const DistillDataset& ds, const Vocabulary& vocab) {
  return to_hex(fnv1a(serialize(ds, vocab)));
}

double sft_loss(const Policy& policy, const World& world, const std::vector<SequenceRef>& batch) {
  double nll = 0.0;
  long n = 0;
  for (const auto& s : batch) {
    replay(policy, world, *s.episode, *s.tokens, [&](int, TokenId t, const StepCache& c) {
      nll -= log_softmax(c.logits)[t];
      ++n;
    });
  }
  return n > 0 ? nll / static_cast<double>(n) : 0.0;
}

double aux_loss(const MoEStats& stats) {
  const auto f = stats.f();
  const auto P = stats.P();
  double s = 0.0;
  for (int i = 0; i < stats.experts; ++i) s += f[i] * P[i];
  return stats.experts * s;
}

TotalLoss rft_loss(const Policy& policy, const World& world, const std::vector<SequenceRef>& batch,
                   double aux_coef, std::vector<double>* grad) {
  struct Step {
    StepCache cache;
    std::vector<double> logp;
    TokenId target;
  };
  std::vector<Step> steps;
  MoEStats stats(policy.n_experts());
  for (const auto& s : batch) {
    replay(policy, world, *s.episode, *s.tokens, [&](int, TokenId t, const StepCache& c) {
      steps.push_back({c, log_softmax(c.logits), t});
      stats.add(c.gate);
    });
  }
  TotalLoss out;
  out.tokens = static_cast<long>(steps.size());
  if (steps.empty()) return out;
  const double n = static_cast<double>(steps.size());
  for (const auto& st : steps) out.sft -= st.logp[st.target];
  out.sft /= n;
  const bool with_aux = policy.is_moe();
  std::vector<double> dgate;
  if (with_aux) {
    out.aux = aux_loss(stats);
    const auto f = stats.f();
    dgate.resize(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) dgate[i] = aux_coef * stats.experts * f[i] / n;
  }
  out.total = out.sft + aux_coef * out.aux;
  if (!grad) return out;

  std::vector<double> dlogits(policy.vocab_size());
  for (const auto& st : steps) {
    for (std::size_t v = 0; v < dlogits.size(); ++v) dlogits[v] = std::exp(st.logp[v]) / n;
    dlogits[st.target] -= 1.0 / n;
    policy.backward(st.cache, dlogits, with_aux && aux_coef > 0.0 ? &dgate : nullptr, *grad);
  }
  return out;
}

std::vector<EpochLoss> run_rft(Policy& policy, const World& world, const DistillDataset& ds,
                               const RFTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (ds.examples.empty()) throw Error("distillation dataset is empty");
  Adam opt(policy.n_params(), {cfg.learning_rate});
  std::vector<std::size_t> order(ds.examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochLoss> history;
  std::vector<double> grad(policy.n_params());
  std::vector<double> last_good = policy.params();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(seed, 0x726674, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform01(rng) * i)]);
    }
    EpochLoss el{epoch, 0.0, 0.0, 0.0};
    long batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<SequenceRef> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        const auto& ex = ds.examples[order[i]];
        batch.push_back({&ex.episode, &ex.trajectory.tokens});
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      const TotalLoss tl = rft_loss(policy, world, batch, cfg.aux_coef, &grad);
      const double norm = clip_grad_norm(grad, cfg.max_grad_norm);
      if (!std::isfinite(tl.total) || !std::isfinite(norm)) {
        policy.params() = last_good;
        throw NumericalError("non-finite fine-tuning loss in epoch " + std::to_string(epoch) +
                             "; parameters restored to the last good step");
      }
      last_good = policy.params();
      opt.step(policy.params(), grad);
      el.sft += tl.sft;
      el.aux += tl.aux;
      el.total += tl.total;
      ++batches;
    }
    el.sft /= batches;
    el.aux /= batches;
    el.total /= batches;
    history.push_back(el);
  }
  return history;
}

}  // namespace concise
