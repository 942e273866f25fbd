#include "concise/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace concise {

int Trajectory::separator_index() const {
  auto it = std::find(tokens.begin(), tokens.end(), Vocabulary::kSeparator);
  return it == tokens.end() ? -1 : static_cast<int>(it - tokens.begin());
}

std::vector<TokenId> Trajectory::thought() const {
  const int sep = separator_index();
  auto end = sep < 0 ? tokens.end() : tokens.begin() + sep;
  std::vector<TokenId> out(tokens.begin(), end);
  if (!out.empty() && sep < 0 && out.back() == Vocabulary::kEnd) out.pop_back();
  return out;
}

std::vector<TokenId> Trajectory::response() const {
  const int sep = separator_index();
  if (sep < 0) return {};
  std::vector<TokenId> out(tokens.begin() + sep + 1, tokens.end());
  if (!out.empty() && out.back() == Vocabulary::kEnd) out.pop_back();
  return out;
}

int Trajectory::length() const {
  return static_cast<int>(thought().size() + response().size());
}

namespace {

template <typename Pick>
Trajectory decode(const Policy& policy, const World& world, const Episode& episode, int max_len,
                  bool keep_logdists, Pick pick) {
  if (max_len < 2) throw ConfigError("max_len must be >= 2");
  Trajectory traj;
  FeatureState state(episode, world.vocab, world.layout, world.env.read_accuracy);
  StepCache cache;
  for (int step = 0; step < max_len; ++step) {
    policy.forward(state.features(), cache);
    std::vector<double> logp = log_softmax(cache.logits);
    const TokenId t = pick(cache.logits);
    traj.tokens.push_back(t);
    traj.logprobs.push_back(logp[t]);
    if (keep_logdists) traj.logdists.push_back(std::move(logp));
    if (t == Vocabulary::kEnd) return traj;
    state.advance(t);
  }
  traj.truncated = true;
  return traj;
}

}  // namespace

Trajectory sample_trajectory(const Policy& policy, const World& world, const Episode& episode,
                             const SampleOptions& opts, std::uint64_t seed) {
  if (!(opts.temperature > 0.0)) throw ConfigError("temperature must be > 0");
  std::mt19937_64 rng(seed);
  return decode(policy, world, episode, opts.max_len, opts.keep_logdists,
                [&](const std::vector<double>& logits) {
                  const std::vector<double> lp = log_softmax(logits, opts.temperature);
                  const double u = uniform01(rng);
                  double acc = 0.0;
                  for (std::size_t i = 0; i < lp.size(); ++i) {
                    acc += std::exp(lp[i]);
                    if (u < acc) return static_cast<TokenId>(i);
                  }
                  // Rounding left a sliver above the cumulative sum.
                  return static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) -
                                              lp.begin());
                });
}

Trajectory greedy_trajectory(const Policy& policy, const World& world, const Episode& episode,
                             int max_len) {
  return decode(policy, world, episode, max_len, false, [](const std::vector<double>& logits) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) -
                                logits.begin());
  });
}

void replay(const Policy& policy, const World& world, const Episode& episode,
            const std::vector<TokenId>& tokens,
            const std::function<void(int, TokenId, const StepCache&)>& fn) {
  FeatureState state(episode, world.vocab, world.layout, world.env.read_accuracy);
  StepCache cache;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    world.vocab.check(tokens[i]);
    policy.forward(state.features(), cache);
    fn(static_cast<int>(i), tokens[i], cache);
    if (i + 1 < tokens.size()) state.advance(tokens[i]);
  }
}

double sequence_log_prob(const Policy& policy, const World& world, const Episode& episode,
                         const std::vector<TokenId>& tokens) {
  double total = 0.0;
  replay(policy, world, episode, tokens, [&](int, TokenId t, const StepCache& c) {
    total += log_softmax(c.logits)[t];
  });
  return total;
}

}  // namespace concise
