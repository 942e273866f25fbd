#include "concise/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace concise {

void GRPOConfig::validate() const {
  if (group_size < 2) throw ConfigError("grpo.group_size must be >= 2");
  if (!(clip_range > 0.0 && clip_range < 1.0)) throw ConfigError("grpo.clip_range must be in (0, 1)");
  if (!(kl_coef >= 0.0)) throw ConfigError("grpo.kl_coef must be >= 0");
  if (!(epsilon_std > 0.0)) throw ConfigError("grpo.epsilon_std must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("grpo.learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("grpo.batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("grpo.epochs must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("grpo.temperature must be > 0");
  if (max_len < 2) throw ConfigError("grpo.max_len must be >= 2");
  if (!(max_grad_norm >= 0.0)) throw ConfigError("grpo.max_grad_norm must be >= 0");
}

std::vector<double> group_advantages(const std::vector<double>& rewards, double epsilon_std) {
  const std::size_t k = rewards.size();
  if (k < 2) throw InvalidGroupError("a group needs at least 2 rewards, got " + std::to_string(k));
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(k);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / static_cast<double>(k));
  std::vector<double> out(k);
  const double denom = sd + epsilon_std;
  for (std::size_t j = 0; j < k; ++j) {
    const double d = rewards[j] - mean;
    // Degenerate group (sd = 0 with the epsilon_std = 0 path): no signal.
    out[j] = denom > 0.0 ? d / denom : 0.0;
  }
  return out;
}

void RolloutGroup::compute_advantages(double epsilon_std) {
  if (rewards.size() != trajectories.size()) {
    throw InvalidGroupError("group has " + std::to_string(trajectories.size()) +
                            " trajectories but " + std::to_string(rewards.size()) + " rewards");
  }
  std::vector<double> r;
  for (const auto& b : rewards) r.push_back(b.composite);
  advantages = group_advantages(r, epsilon_std);
}

double categorical_kl(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw Error("KL between distributions of different size");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) {
      throw InfiniteKlError("KL is infinite: outcome " + std::to_string(i) +
                            " has p_old > 0 but p_theta = 0");
    }
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(kl, 0.0);
}

double kl_divergence(const std::vector<std::vector<double>>& p_old,
                     const std::vector<std::vector<double>>& p_theta) {
  if (p_old.size() != p_theta.size()) throw Error("KL inputs cover different positions");
  if (p_old.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < p_old.size(); ++t) total += categorical_kl(p_old[t], p_theta[t]);
  return total / static_cast<double>(p_old.size());
}

namespace {

struct Branch {
  double value;     // min(r A, clip(r) A)
  double dvalue;    // d value / d r
  bool clipped;     // gradient cut off by the clip
};

Branch clipped_term(double r, double a, double eta) {
  const double lo = 1.0 - eta, hi = 1.0 + eta;
  const double unclipped = r * a;
  const double clipped = std::clamp(r, lo, hi) * a;
  if ((a >= 0.0 && r > hi) || (a < 0.0 && r < lo)) return {clipped, 0.0, true};
  return {std::min(unclipped, clipped), a, false};
}

}  // namespace

LossResult grpo_loss(const Policy& policy, const World& world,
                     const std::vector<RolloutGroup>& groups, const GRPOConfig& cfg,
                     std::vector<double>* grad) {
  const double eta = cfg.clip_range;
  const bool use_kl = cfg.kl_coef > 0.0;
  const int V = policy.vocab_size();

  long n_traj = 0, positions = 0;
  for (const auto& g : groups) {
    if (!g.has_advantages()) throw InvalidGroupError("advantages not computed for a group");
    for (const auto& t : g.trajectories) {
      if (t.logprobs.size() != t.tokens.size()) {
        throw InvalidGroupError("trajectory is missing pi_old log-probs");
      }
      if (use_kl && t.logdists.size() != t.tokens.size()) {
        throw InvalidGroupError("KL term needs the pi_old distributions of every position");
      }
      ++n_traj;
      positions += static_cast<long>(t.tokens.size());
    }
  }
  LossResult out;
  out.positions = positions;
  out.boundary_gap = std::numeric_limits<double>::infinity();
  if (n_traj == 0) return out;

  long clip_events = 0, clip_den = 0;
  std::vector<StepCache> caches;
  std::vector<std::vector<double>> logps;
  std::vector<double> dlogits(V);

  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const RolloutGroup& g = groups[gi];
    for (std::size_t j = 0; j < g.trajectories.size(); ++j) {
      const Trajectory& traj = g.trajectories[j];
      const double a = g.advantages[j];
      const std::size_t n = traj.tokens.size();
      if (n == 0) continue;
      caches.resize(n);
      logps.resize(n);
      replay(policy, world, *g.episode, traj.tokens, [&](int t, TokenId, const StepCache& c) {
        caches[t] = c;
        logps[t] = log_softmax(c.logits);
      });

      // Per-position coefficient on d log pi(a_t) / d logits.
      std::vector<double> coef(n, 0.0);
      if (cfg.ratio == RatioGranularity::kToken) {
        const double norm = cfg.token_norm == TokenNorm::kLength ? static_cast<double>(n)
                                                                 : static_cast<double>(cfg.max_len);
        double s = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
          const double r = std::exp(logps[t][traj.tokens[t]] - traj.logprobs[t]);
          if (!std::isfinite(r)) {
            throw NumericalError(fmt::format(
                "non-finite probability ratio at position {} of trajectory {} in group {}", t, j, gi));
          }
          const Branch b = clipped_term(r, a, eta);
          s += b.value;
          coef[t] = b.dvalue * r / norm;
          clip_events += b.clipped ? 1 : 0;
          ++clip_den;
          out.boundary_gap = std::min({out.boundary_gap, std::abs(r - (1.0 - eta)),
                                       std::abs(r - (1.0 + eta))});
        }
        out.surrogate += s / norm;
      } else {
        double log_ratio = 0.0;
        for (std::size_t t = 0; t < n; ++t) log_ratio += logps[t][traj.tokens[t]] - traj.logprobs[t];
        const double r = std::exp(log_ratio);
        if (!std::isfinite(r)) {
          throw NumericalError(fmt::format(
              "non-finite sequence probability ratio for trajectory {} in group {}", j, gi));
        }
        const Branch b = clipped_term(r, a, eta);
        out.surrogate += b.value;
        std::fill(coef.begin(), coef.end(), b.dvalue * r);
        clip_events += b.clipped ? 1 : 0;
        ++clip_den;
        out.boundary_gap = std::min({out.boundary_gap, std::abs(r - (1.0 - eta)),
                                     std::abs(r - (1.0 + eta))});
      }

      for (std::size_t t = 0; t < n; ++t) {
        const std::vector<double>& lp = logps[t];
        if (use_kl) {
          const std::vector<double>& lo = traj.logdists[t];
          double kl = 0.0;
          for (int v = 0; v < V; ++v) {
            if (std::isinf(lo[v])) continue;
            if (std::isinf(lp[v])) {
              throw InfiniteKlError(fmt::format(
                  "pi_theta gives token {} zero probability at position {} of trajectory {} in "
                  "group {}", v, t, j, gi));
            }
            kl += std::exp(lo[v]) * (lo[v] - lp[v]);
          }
          out.kl += kl;
        }
        if (!grad) continue;
        // d loss / d logits: surrogate part -(coef/J)(onehot - p), KL part beta/N (p - p_old).
        const double sc = -coef[t] / static_cast<double>(n_traj);
        const double kc = use_kl ? cfg.kl_coef / static_cast<double>(positions) : 0.0;
        for (int v = 0; v < V; ++v) {
          const double p = std::exp(lp[v]);
          double d = -sc * p;
          if (use_kl) d += kc * (p - std::exp(traj.logdists[t][v]));
          dlogits[v] = d;
        }
        dlogits[traj.tokens[t]] += sc;
        policy.backward(caches[t], dlogits, nullptr, *grad);
      }
    }
  }
  out.surrogate /= static_cast<double>(n_traj);
  out.kl = positions > 0 ? std::max(out.kl / static_cast<double>(positions), 0.0) : 0.0;
  out.loss = -out.surrogate + cfg.kl_coef * out.kl;
  out.clip_fraction = clip_den > 0 ? static_cast<double>(clip_events) / clip_den : 0.0;
  return out;
}

StepMetrics update_step(Policy& policy, const World& world,
                        const std::vector<RolloutGroup>& groups, const GRPOConfig& cfg,
                        Adam& optimizer) {
  std::vector<double> grad(policy.n_params(), 0.0);
  const LossResult lr = grpo_loss(policy, world, groups, cfg, &grad);
  StepMetrics m;
  m.loss = lr.loss;
  m.clip_fraction = lr.clip_fraction;
  m.kl = lr.kl;
  if (!std::isfinite(lr.loss)) {
    throw NumericalError(fmt::format("non-finite GRPO loss (surrogate {}, kl {})", lr.surrogate, lr.kl));
  }
  m.grad_norm = clip_grad_norm(grad, cfg.max_grad_norm);
  if (!std::isfinite(m.grad_norm)) {
    throw NumericalError(fmt::format("non-finite gradient (loss {}, clip fraction {}, kl {})",
                                     lr.loss, lr.clip_fraction, lr.kl));
  }
  optimizer.step(policy.params(), grad);

  double n = 0.0;
  for (const auto& g : groups) {
    for (std::size_t j = 0; j < g.trajectories.size(); ++j) {
      m.mean_length += g.trajectories[j].length();
      if (j < g.rewards.size()) {
        m.r_correct += g.rewards[j].r_correct;
        m.r_helpful += g.rewards[j].r_helpful;
        m.r_length += g.rewards[j].r_length;
        m.reward += g.rewards[j].composite;
      }
      n += 1.0;
    }
  }
  if (n > 0.0) {
    m.mean_length /= n;
    m.r_correct /= n;
    m.r_helpful /= n;
    m.r_length /= n;
    m.reward /= n;
  }
  return m;
}

}  // namespace concise
