#pragma once

// Helpers shared by the unit and acceptance tests.

#include <cmath>
#include <random>
#include <vector>

#include "concise/grpo.hpp"
#include "concise/oracle.hpp"
#include "concise/trajectory.hpp"

namespace fixtures {

using namespace concise;

// Every parameter drawn from N(0, scale), so outputs are far from uniform.
inline Policy random_policy(const World& world, PolicyConfig pc, std::uint64_t seed,
                            double scale) {
  Policy p = world.make_policy(pc);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (double& v : p.params()) v = normal(rng);
  return p;
}

inline void jitter(Policy& p, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (double& v : p.params()) v += normal(rng);
}

// Rollout groups sampled from `old` with random advantages. The loss is then
// evaluated under some other policy, so ratios spread around 1.
inline std::vector<RolloutGroup> probe_groups(const Policy& old, const World& world,
                                              const std::vector<Episode>& episodes, int k,
                                              int max_len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<RolloutGroup> groups;
  SampleOptions opts;
  opts.max_len = max_len;
  opts.keep_logdists = true;
  for (const Episode& e : episodes) {
    RolloutGroup g;
    g.episode = &e;
    for (int j = 0; j < k; ++j) {
      g.trajectories.push_back(sample_trajectory(old, world, e, opts, rng()));
      g.advantages.push_back(normal(rng));
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

inline Trajectory make_traj(std::vector<TokenId> tokens) {
  Trajectory t;
  t.tokens = std::move(tokens);
  return t;
}

// [<sep>, response..., <eos>]
inline Trajectory respond(std::vector<TokenId> response) {
  std::vector<TokenId> tokens{Vocabulary::kSeparator};
  tokens.insert(tokens.end(), response.begin(), response.end());
  tokens.push_back(Vocabulary::kEnd);
  return make_traj(std::move(tokens));
}

// Normal-approximation binomial interval half-width.
inline double binomial_halfwidth(double p, double n, double z) {
  return z * std::sqrt(p * (1.0 - p) / n);
}

}  // namespace fixtures
