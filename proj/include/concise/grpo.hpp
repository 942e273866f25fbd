#pragma once

#include <vector>

#include "concise/adam.hpp"
#include "concise/reward.hpp"
#include "concise/trajectory.hpp"

namespace concise {

enum class RatioGranularity { kToken, kSequence };
// How token-level terms are averaged within a trajectory: by its own length,
// or summed and divided by max_len (no per-trajectory length weighting).
enum class TokenNorm { kLength, kMaxLen };

struct GRPOConfig {
  int group_size = 8;
  double clip_range = 0.2;
  double kl_coef = 0.01;
  double epsilon_std = 1e-8;
  double learning_rate = 2e-3;
  int batch_size = 8;
  RatioGranularity ratio = RatioGranularity::kToken;
  TokenNorm token_norm = TokenNorm::kLength;
  int epochs = 2;              // gradient steps per rollout batch
  double temperature = 1.0;    // rollout sampling temperature
  int max_len = 128;
  double max_grad_norm = 1.0;  // 0 disables clipping

  void validate() const;
};

// A_j = (r_j - mean) / (std + epsilon_std), population std.
std::vector<double> group_advantages(const std::vector<double>& rewards, double epsilon_std);

// K rollouts of one episode. Trajectories carry pi_old log-probs (and the
// full pi_old distributions when the KL term is active).
struct RolloutGroup {
  const Episode* episode = nullptr;
  std::vector<Trajectory> trajectories;
  std::vector<RewardBreakdown> rewards;
  std::vector<double> advantages;
  double ref_length = 0.0;

  void compute_advantages(double epsilon_std);
  bool has_advantages() const { return advantages.size() == trajectories.size(); }
};

// Categorical KL(p || q) between probability vectors.
double categorical_kl(const std::vector<double>& p, const std::vector<double>& q);

// Per-position KL(p_old || p_theta), averaged over positions.
double kl_divergence(const std::vector<std::vector<double>>& p_old,
                     const std::vector<std::vector<double>>& p_theta);

struct LossResult {
  double loss = 0.0;       // -(surrogate) + beta * kl
  double surrogate = 0.0;  // mean over trajectories of the clipped objective
  double kl = 0.0;         // mean KL(pi_old || pi_theta) per position
  double clip_fraction = 0.0;
  long positions = 0;
  // Smallest |ratio - (1 +- clip_range)| seen; finite-difference probes skip
  // points sitting on a clip boundary.
  double boundary_gap = 0.0;
};

// Negated clipped objective with KL penalty. When `grad` is non-null the
// exact gradient w.r.t. the policy parameters is accumulated into it.
LossResult grpo_loss(const Policy& policy, const World& world,
                     const std::vector<RolloutGroup>& groups, const GRPOConfig& cfg,
                     std::vector<double>* grad = nullptr);

struct StepMetrics {
  double loss = 0.0;
  double clip_fraction = 0.0;
  double kl = 0.0;
  double grad_norm = 0.0;
  double mean_length = 0.0;
  double r_correct = 0.0;
  double r_helpful = 0.0;
  double r_length = 0.0;
  double reward = 0.0;
};

// One optimizer step on the batch. Throws NumericalError (parameters left
// untouched) when the loss or gradient is not finite.
StepMetrics update_step(Policy& policy, const World& world,
                        const std::vector<RolloutGroup>& groups, const GRPOConfig& cfg,
                        Adam& optimizer);

}  // namespace concise
