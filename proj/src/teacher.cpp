#include "concise/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

namespace concise {

void TeacherConfig::validate() const {
  if (!(verbosity >= 0.0)) throw ConfigError("teacher.verbosity must be >= 0");
  if (error_rate < 0.0 || error_rate > 1.0) throw ConfigError("teacher.error_rate must be in [0, 1]");
  if (answer_reads < 1 || aux_reads < 1) throw ConfigError("teacher reads must be >= 1");
  if (distractor_share < 0.0 || distractor_share > 1.0) {
    throw ConfigError("teacher.distractor_share must be in [0, 1]");
  }

  if (max_len < 4) throw ConfigError("teacher.max_len must be >= 4");
}

namespace {

int uniform_int(std::mt19937_64& rng, int n) { return static_cast<int>(uniform01(rng) * n); }

// Number of failures before the first success, with the given mean.
int geometric(std::mt19937_64& rng, double mean) {
  if (mean <= 0.0) return 0;
  const double p = 1.0 / (1.0 + mean);
  const double u = 1.0 - uniform01(rng);  // (0, 1]
  return static_cast<int>(std::floor(std::log(u) / std::log1p(-p)));
}

TokenId value_outside(const Episode& e, const Vocabulary& vocab, int key, std::mt19937_64& rng) {
  std::vector<TokenId> pool;
  for (int v = 0; v < vocab.values_per_key(); ++v) {
    if (!e.contains_value(vocab, vocab.value(key, v))) pool.push_back(vocab.value(key, v));
  }
  if (pool.empty()) {
    // Every value of this key is listed; fall back to any absent value.
    for (int s = 0; s < vocab.n_values(); ++s) {
      if (!e.contains_value(vocab, vocab.value_from_slot(s))) pool.push_back(vocab.value_from_slot(s));
    }
  }
  return pool[uniform_int(rng, static_cast<int>(pool.size()))];
}

}  // namespace

ScriptedTeacher::ScriptedTeacher(const World& world, TeacherConfig cfg) : world_(world), cfg_(cfg) {
  cfg_.validate();
}

std::string ScriptedTeacher::identity() const {
  return fmt::format("scripted(verbosity={},error_rate={})", cfg_.verbosity, cfg_.error_rate);
}

Trajectory ScriptedTeacher::generate(const Episode& e, double, std::uint64_t seed) const {
  const Vocabulary& vocab = world_.vocab;
  std::mt19937_64 rng(seed);
  const Query& q = e.question;
  using Unit = std::vector<TokenId>;
  std::vector<Unit> units;
  auto read = [&](int doc, int key) { return Unit{vocab.doc(doc), vocab.key(key)}; };

  std::vector<TokenId> response;
  int aux_key = q.key;
  if (e.answerable) {
    std::vector<int> others;
    for (int k : e.keys_of(q.doc)) {
      if (k != q.key) others.push_back(k);
    }
    aux_key = others[uniform_int(rng, static_cast<int>(others.size()))];
    for (int i = 0; i < cfg_.answer_reads; ++i) units.push_back(read(q.doc, q.key));
    for (int i = 0; i < cfg_.aux_reads; ++i) units.push_back(read(q.doc, aux_key));
    response = {e.gold_answer, vocab.value(aux_key, *e.lookup(q.doc, aux_key))};
  } else {
    std::vector<int> alts;
    for (int d : e.doc_ids()) {
      if (e.lookup(d, q.key)) alts.push_back(d);
    }
    const int alt = alts[uniform_int(rng, static_cast<int>(alts.size()))];
    units.push_back(read(q.doc, q.key));
    for (int i = 0; i < cfg_.aux_reads; ++i) units.push_back(read(alt, q.key));
    response = {Vocabulary::kUnavailable, vocab.value(q.key, *e.lookup(alt, q.key))};
  }

  auto shuffle = [&](std::size_t from) {
    for (std::size_t i = units.size() - 1; i > from; --i) {
      std::swap(units[i], units[from + uniform_int(rng, static_cast<int>(i - from + 1))]);
    }
  };
  // Grounding reads come first in random order; the verbose tail follows.
  shuffle(0);
  int required = 0;
  for (const auto& u : units) required += static_cast<int>(u.size());
  const std::size_t tail = units.size();
  int budget = geometric(rng, std::max(0.0, cfg_.verbosity - required));
  std::vector<std::pair<int, int>> distractors;
  for (const auto& f : e.documents) {
    if (f.doc != q.doc && f.key != q.key) distractors.push_back({f.doc, f.key});
  }
  while (budget > 0) {
    if (budget >= 2 && !distractors.empty() && uniform01(rng) < cfg_.distractor_share) {
      const auto [d, k] = distractors[uniform_int(rng, static_cast<int>(distractors.size()))];
      units.push_back(read(d, k));
      budget -= 2;
    } else {
      units.push_back({vocab.filler(uniform_int(rng, vocab.n_fillers()))});
      budget -= 1;
    }
  }
  if (units.size() > tail + 1) shuffle(tail);

  if (uniform01(rng) < cfg_.error_rate) {
    switch (uniform_int(rng, 3)) {
      case 0:  // fabricated supporting fact
        response[1] = value_outside(e, vocab, aux_key, rng);
        break;
      case 1:  // no supporting fact
        response.pop_back();
        break;
      default:  // wrong answer
        response[0] = e.answerable ? Vocabulary::kUnavailable : value_outside(e, vocab, q.key, rng);
        break;
    }
  }

  Trajectory t;
  for (const auto& u : units) t.tokens.insert(t.tokens.end(), u.begin(), u.end());
  t.tokens.push_back(Vocabulary::kSeparator);
  t.tokens.insert(t.tokens.end(), response.begin(), response.end());
  t.tokens.push_back(Vocabulary::kEnd);
  if (static_cast<int>(t.tokens.size()) > cfg_.max_len) {
    t.tokens.resize(cfg_.max_len);
    t.truncated = true;
  }
  return t;
}

PolicyTeacher::PolicyTeacher(const World& world, Policy policy, int max_len)
    : world_(world), policy_(std::move(policy)), max_len_(max_len) {}

Trajectory PolicyTeacher::generate(const Episode& e, double temperature, std::uint64_t seed) const {
  SampleOptions opts;
  opts.temperature = temperature;
  opts.max_len = max_len_;
  return sample_trajectory(policy_, world_, e, opts, seed);
}

}  // namespace concise
