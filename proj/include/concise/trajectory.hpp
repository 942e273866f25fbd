#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "concise/policy.hpp"

namespace concise {

// Everything the policy needs to see an episode: vocabulary, feature layout
// and the read noise level.
struct World {
  explicit World(const EnvConfig& cfg) : env(cfg), vocab(cfg), layout(vocab) {}

  EnvConfig env;
  Vocabulary vocab;
  FeatureLayout layout;

  Policy make_policy(const PolicyConfig& cfg) const {
    return Policy(cfg, layout.dim, vocab.size());
  }
};

// Generated action [T; <sep>; R; <eos>]. `tokens` holds every generated token
// including the separator and terminator; `logprobs` the untempered policy
// log-probability of each (empty for teacher output).
struct Trajectory {
  std::vector<TokenId> tokens;
  std::vector<double> logprobs;
  // Full untempered log-distribution per position, kept only when requested
  // (the GRPO KL term needs it for pi_old).
  std::vector<std::vector<double>> logdists;
  bool truncated = false;

  int separator_index() const;  // -1 when absent
  bool terminated() const { return !tokens.empty() && tokens.back() == Vocabulary::kEnd; }
  std::vector<TokenId> thought() const;
  std::vector<TokenId> response() const;
  // |T| + |R|; separator and terminator are not counted.
  int length() const;
};

struct SampleOptions {
  double temperature = 1.0;
  int max_len = 128;
  bool keep_logdists = false;
};

Trajectory sample_trajectory(const Policy& policy, const World& world, const Episode& episode,
                             const SampleOptions& opts, std::uint64_t seed);

// Argmax decoding; ties go to the lowest token id.
Trajectory greedy_trajectory(const Policy& policy, const World& world, const Episode& episode,
                             int max_len = 128);

// Teacher-forced pass over `tokens`: calls fn(position, token, cache) after
// the forward pass that predicts each token.
void replay(const Policy& policy, const World& world, const Episode& episode,
            const std::vector<TokenId>& tokens,
            const std::function<void(int, TokenId, const StepCache&)>& fn);

// Sum of log pi(token | context, prefix) over all generated tokens.
double sequence_log_prob(const Policy& policy, const World& world, const Episode& episode,
                         const std::vector<TokenId>& tokens);

}  // namespace concise
