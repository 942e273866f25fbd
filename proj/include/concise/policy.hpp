#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "concise/features.hpp"

namespace concise {

struct PolicyConfig {
  int hidden = 32;      // hidden units per expert
  int experts = 4;      // 0 = dense MLP, >= 1 = gated mixture of experts
  bool skip = true;     // linear path from features straight to logits
  double init_scale = 0.1;

  void validate() const;
};

// Routing statistics: f_i is the fraction of tokens whose top-1 gate is
// expert i (ties split evenly), P_i the mean gate probability.
struct MoEStats {
  int experts = 0;
  double tokens = 0.0;
  std::vector<double> top1;     // sum over tokens of the top-1 share
  std::vector<double> gate_sum; // sum over tokens of gate probabilities

  explicit MoEStats(int e = 0) : experts(e), top1(e, 0.0), gate_sum(e, 0.0) {}
  void add(const std::vector<double>& gate);
  std::vector<double> f() const;
  std::vector<double> P() const;
};

// Activations of one forward pass, kept for the backward pass.
struct StepCache {
  SparseVector x;
  std::vector<double> act;     // tanh activations, experts x hidden
  std::vector<double> gate;    // expert probabilities
  std::vector<double> hidden;  // gated mixture
  std::vector<double> logits;
};

// Token policy over the whole vocabulary. Parameters live in one flat vector
// so optimizers and finite-difference probes can treat them uniformly.
class Policy {
 public:
  Policy(PolicyConfig cfg, int input_dim, int vocab_size);

  // Random init from `seed`; output layers start at zero so the untrained
  // policy is uniform.
  void init(std::uint64_t seed);

  const PolicyConfig& config() const { return cfg_; }
  int input_dim() const { return input_dim_; }
  int vocab_size() const { return vocab_; }
  int n_experts() const { return std::max(cfg_.experts, 1); }
  bool is_moe() const { return cfg_.experts >= 1; }
  std::size_t n_params() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  void forward(const SparseVector& x, StepCache& cache) const;

  // Accumulates d(loss)/d(params) into `grad` given d(loss)/d(logits) and an
  // optional d(loss)/d(gate) (from the routing auxiliary loss).
  void backward(const StepCache& cache, const std::vector<double>& dlogits,
                const std::vector<double>* dgate, std::vector<double>& grad) const;

  bool all_finite() const;

 private:
  std::size_t w1(int e) const { return w1_ + static_cast<std::size_t>(e) * hidden_block_; }
  std::size_t b1(int e) const { return w1(e) + static_cast<std::size_t>(cfg_.hidden) * input_dim_; }

  PolicyConfig cfg_;
  int input_dim_;
  int vocab_;
  std::size_t hidden_block_ = 0;
  std::size_t w1_ = 0, gate_w_ = 0, gate_b_ = 0, w2_ = 0, b2_ = 0, skip_ = 0;
  std::vector<double> params_;
};

// Numerically stable log-softmax of logits / temperature.
std::vector<double> log_softmax(const std::vector<double>& logits, double temperature = 1.0);

nlohmann::json policy_config_to_json(const PolicyConfig& c);
PolicyConfig policy_config_from_json(const nlohmann::json& j);

// Checkpoint: policy config + parameters, tagged with the hash of the run
// config that produced them.
void save_checkpoint(const std::filesystem::path& path, const Policy& policy,
                     const std::string& config_hash, const nlohmann::json& extra = {});
struct Checkpoint {
  Policy policy;
  std::string config_hash;
  nlohmann::json extra;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace concise
